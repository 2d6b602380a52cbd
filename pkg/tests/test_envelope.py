import random
from fractions import Fraction as F

from hypothesis import given, settings, strategies as st

import vocsep.envelope as envelope
from helpers import melody, random_score
from vocsep.core import ActiveVoiceSet, build_chord_sequence
from vocsep.envelope import (envelope_assign, envelope_multipass, insert_voice,
                             separate_envelope)
from vocsep.graph import VoiceGraph
from vocsep.score import make_note, make_score


def test_single_melody_is_one_voice():
    chords = build_chord_sequence(make_score(melody([60, 62, 64, 65, 67])))
    for graph in (envelope_multipass(chords), envelope_assign(chords)[1]):
        assert graph.links() == {(0, 1), (1, 2), (2, 3), (3, 4)}


def test_three_whole_notes_are_three_voices():
    chords = build_chord_sequence(make_score([make_note(i, 60 + 4 * i, 0, 4) for i in range(3)]))
    assert envelope_multipass(chords).links() == set()
    pairs, graph = envelope_assign(chords)
    assert graph.links() == set() and all(v is None for _, v in pairs)


def test_two_parallel_lines():
    upper = [make_note(i, p, i, 1) for i, p in enumerate([72, 71, 72, 74])]
    lower = [make_note(10 + i, p, i, 1) for i, p in enumerate([64, 62, 64, 65])]
    chords = build_chord_sequence(make_score(upper + lower))
    expect = {(0, 1), (1, 2), (2, 3), (10, 11), (11, 12), (12, 13)}
    assert envelope_multipass(chords).links() == expect
    assert envelope_assign(chords)[1].links() == expect


def test_lower_note_of_a_new_dyad_starts_a_voice():
    notes = [make_note(0, 67, 0, 1), make_note(1, 69, 1, 1), make_note(2, 65, 1, 1)]
    pairs, graph = envelope_assign(build_chord_sequence(make_score(notes)))
    assert dict(pairs) == {0: None, 1: 0, 2: None}
    assert graph.links() == {(0, 1)}


def test_insert_voice_into_empty_set():
    voices = ActiveVoiceSet({0: make_note(0, 60, 0, 1)})
    assert insert_voice(0, voices).order == [0]


def test_highest_voice_goes_first():
    notes = {i: make_note(i, p, 0, 1) for i, p in enumerate([64, 60, 72])}
    voices = ActiveVoiceSet(notes, order=[0, 1])
    assert insert_voice(2, voices).order == [2, 0, 1]


def test_insert_skips_a_blocked_voice():
    # voice 0 -> 1 runs C4 -> E4 around a sustained D4, so the D4 voice is blocked
    notes = {0: make_note(0, 60, 0, 1), 1: make_note(1, 64, 1, 1), 3: make_note(3, 62, 0, 2),
             4: make_note(4, 63, 2, 1)}
    voices = ActiveVoiceSet(notes, VoiceGraph([(0, 1)]), order=[1, 3])
    assert voices.is_blocked(3)
    assert insert_voice(4, voices).order == [1, 3, 4]


def test_chains_are_linked_before_the_envelope():
    chain = [make_note(i, 62, F(i, 2), F(1, 4)) for i in range(6)]
    high = [make_note(10 + i, 74, F(i, 2) + F(1, 4), F(1, 4)) for i in range(6)]
    graph = separate_envelope(make_score(chain + high))
    assert {(i, i + 1) for i in range(5)} <= graph.links()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_assign_yields_monophonic_non_overlapping_voices(seed):
    score = random_score(random.Random(seed), 24)
    notes = score.by_id
    pairs, graph = envelope_assign(build_chord_sequence(score))
    assert sorted(n for n, _ in pairs) == sorted(notes)
    for a, b in graph.links():
        assert notes[a].off <= notes[b].on
    for m in notes:
        assert len(graph.lt(m)) <= 1 and len(graph.rt(m)) <= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_higher_notes_take_higher_voices(seed):
    score = random_score(random.Random(seed), 24)
    seen = []
    original = envelope.update_complete_voices

    def spy(assignment, voices):
        seen.append((dict(assignment), list(voices.order)))
        return original(assignment, voices)

    envelope.update_complete_voices = spy
    try:
        envelope_assign(build_chord_sequence(score))
    finally:
        envelope.update_complete_voices = original
    for assignment, order in seen:
        slots = [order.index(v) for v in assignment.values() if v is not None]
        assert slots == sorted(slots)
