import random
from fractions import Fraction as F

from hypothesis import given, settings, strategies as st

from helpers import random_score
from vocsep.core import (ActiveVoiceSet, Voice, beat_horizon_filter, blocked, build_chord_sequence,
                         consecutive_repetition, crosses, detect_pseudo_polyphonic_chains,
                         shared_divergent_note, top_bot, voice_of)
from vocsep.graph import VoiceGraph
from vocsep.score import make_note, make_score

C4, D4, E4, F4, G4 = 60, 62, 64, 65, 67


def n(i, ps, on, dur=1):
    return make_note(i, ps, on, dur)


# ------------------------------------------------------------ chord sequence

def test_chords_group_by_onset_and_sort_by_pitch():
    score = make_score([n(0, C4, 0), n(1, E4, 0), n(2, G4, 1)])
    chords = build_chord_sequence(score)
    assert [[m.ps for m in c.notes] for c in chords] == [[E4, C4], [G4]]
    assert [c.index for c in chords] == [1, 2]
    assert chords[0].position(0) == 2


def test_empty_score_has_no_chords():
    assert build_chord_sequence(make_score([])) == []


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_chords_permute_the_notes(seed):
    score = random_score(random.Random(seed), 20)
    chords = build_chord_sequence(score)
    flat = [m for c in chords for m in c.notes]
    assert sorted(m.id for m in flat) == sorted(m.id for m in score.notes)
    assert all(a.onset < b.onset for a, b in zip(chords, chords[1:]))
    for c in chords:
        assert all((a.ps, -a.id) > (b.ps, -b.id) for a, b in zip(c.notes, c.notes[1:]))


# ------------------------------------------------------------ crossing

def test_crossing_by_a_note_inside_the_window():
    v = Voice.chain([n(10, D4, 1)])
    assert crosses(n(0, C4, 0), n(1, E4, 2), v)


def test_no_cross_when_the_window_stays_above():
    v = Voice.chain([n(10, F4, F(1, 2)), n(11, G4, F(3, 2))])
    assert not crosses(n(0, C4, 0), n(1, E4, 2), v)


def test_no_cross_with_empty_window():
    v = Voice.chain([n(10, D4, 5)])
    assert not crosses(n(0, C4, 0), n(1, E4, 2), v)


# ------------------------------------------------------------ blocking

def test_blocked_between_pitches():
    v = Voice.chain([n(10, C4, 0), n(11, E4, 1)])
    assert blocked(n(0, D4, 0), v)


def test_blocked_by_equal_pitch():
    v = Voice.chain([n(10, C4, 1), n(11, G4, 2)])
    assert blocked(n(0, C4, 0), v)


def test_not_blocked_far_above():
    v = Voice.chain([n(10, C4, 0), n(11, E4, 1)])
    assert not blocked(n(0, 81, 0), v)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 127), st.integers(0, 127), st.integers(0, 8))
def test_single_note_voice_never_blocks(p, q, on):
    assert not blocked(n(0, p, on), Voice.chain([n(1, q, 0)]))


# ------------------------------------------------------------ horizon

def test_horizon_filter():
    notes = {0: n(0, C4, 0, 1), 1: n(1, E4, 0, 2)}
    voices = ActiveVoiceSet(notes, VoiceGraph(), F(4), order=[0, 1])
    chord = build_chord_sequence(make_score([n(2, G4, 6)]))[0]
    assert beat_horizon_filter(voices, chord).order == [1]
    assert voices.order == [0, 1]


def test_voice_is_restricted_to_the_horizon():
    notes = {i: n(i, C4 + i, 3 * i) for i in range(4)}
    g = VoiceGraph([(0, 1), (1, 2), (2, 3)])
    v = voice_of(notes[3], g, notes, F(4))
    assert [m.id for m in v.notes] == [2, 3]  # note 1 ends 5 beats before note 3 starts


# ------------------------------------------------------------ top / bot

def test_monophonic_top_equals_bot():
    notes = {i: n(i, C4 + i, i) for i in range(6)}
    g = VoiceGraph([(i, i + 1) for i in range(5)])
    v = voice_of(notes[5], g, notes, None)
    top, bot = top_bot(v, g)
    assert [m.id for m in top] == [m.id for m in bot] == [5, 4, 3, 2]
    assert top_bot(v, g, 1) == ([notes[5]], [notes[5]])


def test_top_and_bot_follow_the_outer_lines():
    notes = {0: n(0, G4, 0), 1: n(1, C4, 0), 2: n(2, 69, 1), 3: n(3, D4, 1), 4: n(4, E4, 2)}
    g = VoiceGraph([(0, 2), (1, 3), (2, 4), (3, 4)])
    v = voice_of(notes[4], g, notes, None)
    top, bot = top_bot(v, g)
    assert [m.id for m in top] == [4, 2, 0]
    assert [m.id for m in bot] == [4, 3, 1]


# ------------------------------------------------------------ divergence

def brute_div(u, w, graph):
    """Scan every shared ancestor with two or more out-links, keep the latest."""
    best = None
    for m in u.notes:
        if any(x.id == m.id for x in w.notes) and len(graph.rt(m.id)) > 1:
            if best is None or (m.on, m.ps, -m.id) > (best.on, best.ps, -best.id):
                best = m
    return best


def test_shared_divergent_note_nested():
    # 0 splits into 1 and 2; 1 splits into 3 and 4
    notes = {0: n(0, E4, 0), 1: n(1, G4, 1), 2: n(2, C4, 1), 3: n(3, 72, 2), 4: n(4, F4, 2)}
    g = VoiceGraph([(0, 1), (0, 2), (1, 3), (1, 4)])
    vs = {i: voice_of(notes[i], g, notes, None) for i in notes}
    assert shared_divergent_note(vs[3], vs[4], g).id == 1
    assert shared_divergent_note(vs[3], vs[2], g).id == 0
    for a in notes:
        for b in notes:
            assert shared_divergent_note(vs[a], vs[b], g) == brute_div(vs[a], vs[b], g)


def test_unrelated_voices_share_nothing():
    notes = {0: n(0, E4, 0), 1: n(1, C4, 0)}
    g = VoiceGraph()
    assert shared_divergent_note(voice_of(notes[0], g, notes), voice_of(notes[1], g, notes), g) is None


# ------------------------------------------------------------ repetition

def test_consecutive_repetition():
    notes = {0: n(0, D4, 0), 1: n(1, C4, 1), 2: n(2, C4, 2), 3: n(3, C4, 3)}
    g = VoiceGraph([(0, 1), (1, 2), (2, 3)])
    v = voice_of(notes[3], g, notes, None)
    assert consecutive_repetition(n(9, C4, 4), v, g) == 3
    assert consecutive_repetition(n(9, D4, 4), v, g) == 0


def test_repetition_follows_the_most_salient_in_link():
    notes = {0: n(0, C4, 0), 1: n(1, C4, 1), 2: n(2, E4, 1), 3: n(3, C4, 2)}
    g = VoiceGraph([(1, 3), (2, 3), (0, 1)])
    v = voice_of(notes[3], g, notes, None)
    assert consecutive_repetition(n(9, C4, 3), v, g) == 3
    g2 = VoiceGraph([(2, 3), (1, 3), (0, 1)])
    assert consecutive_repetition(n(9, C4, 3), voice_of(notes[3], g2, notes, None), g2) == 1


# ------------------------------------------------------------ depth

@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=25))
def test_depth_dfs_equals_bfs(edges):
    g = VoiceGraph([(a, b) for a, b in set(edges) if a < b])
    for m in range(10):
        assert g.depth(m) == g.depth_bfs(m)
        assert (g.depth(m) == 0) == (not g.rt(m))


# ------------------------------------------------------------ repeat chains

def test_repeat_chain_of_eighths():
    notes = [n(i, D4, F(i, 2), F(1, 4)) for i in range(8)]
    assert detect_pseudo_polyphonic_chains(make_score(notes)) == [tuple(range(8))]


def test_alternating_pitches():
    notes = [n(i, D4 if i % 2 == 0 else E4, F(i, 2), F(1, 2)) for i in range(8)]
    chains = detect_pseudo_polyphonic_chains(make_score(notes))
    assert sorted(chains) == [(0, 2, 4, 6), (1, 3, 5, 7)]
    spaced = [n(i, D4 if i % 2 == 0 else E4, F(i, 2), F(1, 4)) for i in range(8)]
    assert detect_pseudo_polyphonic_chains(make_score(spaced)) == []


def test_empty_score_has_no_chains():
    assert detect_pseudo_polyphonic_chains(make_score([])) == []


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_chains_are_exactly_the_maximal_runs(seed):
    rng = random.Random(seed)
    notes, nid = [], 0
    for step in range(32):
        for p in rng.sample((C4, D4, E4), rng.randint(0, 2)):
            notes.append(n(nid, p, F(step, 4), F(rng.choice((1, 1, 2)), 8)))
            nid += 1
    score = make_score(notes)
    key = {(m.ps, m.bd, m.on): m for m in notes}
    runs = set()
    for m in notes:
        if (m.ps, m.bd, m.on - 2 * m.bd) in key:
            continue  # not the start of a run
        run = [m]
        while (run[-1].ps, run[-1].bd, run[-1].on + 2 * run[-1].bd) in key:
            run.append(key[(run[-1].ps, run[-1].bd, run[-1].on + 2 * run[-1].bd)])
        if len(run) >= 3:
            runs.add(tuple(x.id for x in run))
    assert set(detect_pseudo_polyphonic_chains(score)) == runs
