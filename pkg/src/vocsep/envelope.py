"""Envelope extraction baseline, in multi-pass and single-pass form."""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .core import (DEFAULT_HORIZON, ActiveVoiceSet, Chord, build_chord_sequence,
                   detect_pseudo_polyphonic_chains, pair_crosses)
from .graph import VoiceGraph
from .score import Score

EMPTY = None


def envelope_multipass(chords: Sequence[Chord]) -> VoiceGraph:
    """Peel off the topmost monophonic line of non-overlapping notes until none remain."""
    remaining = [list(c.notes) for c in chords]
    graph = VoiceGraph()
    while any(remaining):
        cur = None
        for rest in remaining:
            if not rest:
                continue
            top = rest[0]
            if cur is None or cur.off <= top.on:
                if cur is not None:
                    graph.add_link(cur.id, top.id)
                cur = top
                rest.pop(0)
    return graph


def insert_voice(new: int, voices: ActiveVoiceSet, parents: Iterable[int] = ()) -> ActiveVoiceSet:
    """Insert a voice before the first open voice whose last note is not higher.

    Skipped voices: blocked ones, ones whose last note is higher than the new
    voice's, and partial ones (continued by a voice already in the set, or a
    parent of the new voice). With complete voices only, the last rule never
    applies.
    """
    ps = voices.notes[new].ps
    parents = set(parents)
    order = voices.order
    j = 0
    while j < len(order) and (
            voices.notes[order[j]].ps > ps
            or order[j] in parents
            or voices.has_continuation(order[j])
            or voices.is_blocked(order[j], parents)):
        j += 1
    order.insert(j, new)
    return voices


def update_complete_voices(assignment: Mapping[int, int | None], voices: ActiveVoiceSet) -> ActiveVoiceSet:
    """One-to-one bookkeeping over complete voices only.

    ``assignment`` maps each note of the chord, in chord order, to the voice it
    continues or to ``None``. A continuation replaces its voice in place unless
    it crosses another voice; crossing and fresh voices are then inserted in
    chord order. For the envelope pattern (assigned notes above fresh ones) this
    is exactly "crossing voices first, then new voices".
    """
    notes = voices.notes
    deferred = []
    for nid, v in assignment.items():
        if v is None:
            deferred.append((nid, None))
            continue
        crossing = pair_crosses(voices, [v], notes[nid], candidates=voices.order)
        voices.graph.add_link(v, nid)
        if crossing:
            deferred.append((nid, v))
        else:
            voices.order[voices.order.index(v)] = nid
    for nid, v in deferred:
        if v is not None:
            voices.order.remove(v)
        insert_voice(nid, voices)
    return voices


def envelope_assign(chords: Sequence[Chord], horizon: Fraction | None = DEFAULT_HORIZON
                    ) -> tuple[list[tuple[int, int | None]], VoiceGraph]:
    """Single left-to-right pass: the j-th note goes to the j-th free complete voice.

    Returns the (note, voice) pairs, with ``None`` for the empty voice, and the
    resulting link graph. ``horizon`` only bounds how far back a voice's notes
    are considered by the crossing and blocking tests.
    """
    notes = {n.id: n for c in chords for n in c.notes}
    voices = ActiveVoiceSet(notes, horizon=horizon)
    pairs: list[tuple[int, int | None]] = []
    for chord in chords:
        free = [v for v in voices.order if notes[v].off <= chord.onset]
        assignment = {n.id: (free[j] if j < len(free) else EMPTY)
                      for j, n in enumerate(chord.notes)}
        pairs.extend(assignment.items())
        update_complete_voices(assignment, voices)
    return pairs, voices.graph


def separate_envelope(score: Score, chains: bool = True,
                      horizon: Fraction | None = DEFAULT_HORIZON) -> VoiceGraph:
    """Run the envelope model with pseudo-polyphonic chains pre-linked and set aside."""
    chain_list = detect_pseudo_polyphonic_chains(score) if chains else []
    held = {i for ch in chain_list for i in ch}
    rest = score.replace(notes=tuple(n for n in score.notes if n.id not in held))
    _, graph = envelope_assign(build_chord_sequence(rest), horizon)
    for ch in chain_list:
        for a, b in zip(ch, ch[1:]):
            graph.add_link(a, b)
    return graph
