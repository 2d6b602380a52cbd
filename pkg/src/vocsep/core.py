"""Chord sequence, voices and the predicates used by every separation engine."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from typing import Iterable, Sequence

from .graph import VoiceGraph
from .score import Note, Score

DEFAULT_HORIZON = Fraction(4)
TOP_BOT_K = 4
CHAIN_MIN = 3


@dataclass(frozen=True)
class Chord:
    onset: Fraction
    notes: tuple[Note, ...]
    index: int  # sp(c), 1-based

    def __len__(self):
        return len(self.notes)

    def position(self, note_id: int) -> int:
        """cp(m): 1-based position from the top."""
        for i, n in enumerate(self.notes):
            if n.id == note_id:
                return i + 1
        raise KeyError(note_id)


def build_chord_sequence(score: Score) -> list[Chord]:
    groups: dict[Fraction, list[Note]] = {}
    for n in score.notes:
        groups.setdefault(n.on, []).append(n)
    chords = []
    for i, on in enumerate(sorted(groups)):
        notes = tuple(sorted(groups[on], key=lambda n: (-n.ps, n.id)))
        chords.append(Chord(on, notes, i + 1))
    return chords


@dataclass(frozen=True)
class Voice:
    """The horizon-restricted notes of a voice together with its internal links."""

    last: Note
    notes: tuple[Note, ...]  # sorted by onset, then descending pitch
    pairs: tuple[tuple[Note, Note], ...]

    @cached_property
    def ids(self) -> frozenset[int]:
        return frozenset(n.id for n in self.notes)

    @classmethod
    def chain(cls, notes: Sequence[Note]) -> "Voice":
        """A monophonic voice made of consecutive notes."""
        ordered = tuple(sorted(notes, key=lambda n: (n.on, -n.ps, n.id)))
        return cls(ordered[-1], ordered, tuple(zip(ordered, ordered[1:])))


def within_horizon(n: Note, m: Note, horizon: Fraction) -> bool:
    """Is the offset of ``n`` no more than ``horizon`` beats before the onset of ``m``."""
    return m.on - n.off <= horizon


def voice_of(last: Note, graph: VoiceGraph, notes: dict[int, Note],
             horizon: Fraction | None = DEFAULT_HORIZON) -> Voice:
    """Collect the ancestors of ``last`` that lie within the beat horizon of it."""
    seen = {last.id}
    stack = [last.id]
    while stack:
        for p in graph.lt(stack.pop()):
            if p in seen:
                continue
            if horizon is not None and not within_horizon(notes[p], last, horizon):
                continue
            seen.add(p)
            stack.append(p)
    members = tuple(sorted((notes[i] for i in seen), key=lambda n: (n.on, -n.ps, n.id)))
    pairs = tuple(
        (notes[p], n) for n in members for p in graph.lt(n.id) if p in seen
    )
    return Voice(last, members, pairs)


def crosses(n1: Note, n2: Note, voice: Voice) -> bool:
    """Does the pair (n1, n2) cross ``voice``?

    The voice notes with onsets in [on(n1), on(n2)] form the window. Its first
    note must start before n2 and its last note must start after n1; the pair
    crosses when the window runs from one side of n1 to the other side of n2.
    """
    window = [m for m in voice.notes
              if m.id != n1.id and m.id != n2.id and n1.on <= m.on <= n2.on]
    if not window:
        return False
    first_on = min(m.on for m in window)
    last_on = max(m.on for m in window)
    if first_on >= n2.on or last_on <= n1.on:
        return False
    firsts = [m for m in window if m.on == first_on]
    lasts = [m for m in window if m.on == last_on]
    for s1 in firsts:
        for sk in lasts:
            if s1.ps >= n1.ps and sk.ps <= n2.ps:
                return True
            if s1.ps <= n1.ps and sk.ps >= n2.ps:
                return True
    return False


def blocked(n: Note, voice: Voice) -> bool:
    """Is ``n`` trapped by a consecutive note pair of ``voice``?

    Pairs that contain ``n`` itself are ignored.
    """
    for a, b in voice.pairs:
        if a.id == n.id or b.id == n.id:
            continue
        lo, hi = sorted((a.ps, b.ps))
        if lo < n.ps < hi and n.on <= a.on:
            return True
        if n.ps == a.ps or n.ps == b.ps:
            return True
    return False


def top_bot(voice: Voice, graph: VoiceGraph, k: int = TOP_BOT_K) -> tuple[list[Note], list[Note]]:
    """Upper and lower boundary chains of a voice, most recent first.

    Both start at the last note. Each step moves to the highest (top) or lowest
    (bottom) predecessor inside the voice.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    members = {m.id: m for m in voice.notes}

    def walk(pick_high: bool) -> list[Note]:
        out = [voice.last]
        while len(out) < k:
            preds = [members[p] for p in graph.lt(out[-1].id) if p in members]
            if not preds:
                break
            if pick_high:
                nxt = max(preds, key=lambda m: (m.ps, m.on, -m.id))
            else:
                nxt = min(preds, key=lambda m: (m.ps, -m.on, m.id))
            out.append(nxt)
        return out

    return walk(True), walk(False)


def shared_divergent_note(u: Voice, w: Voice, graph: VoiceGraph) -> Note | None:
    """div(u, w): most recent note common to both voices that has diverged."""
    common = [m for m in u.notes if m.id in w.ids and len(graph.rt(m.id)) >= 2]
    if not common:
        return None
    return max(common, key=lambda m: (m.on, m.ps, -m.id))


def consecutive_repetition(n: Note, voice: Voice, graph: VoiceGraph) -> int:
    """cr(n, v): trailing notes of v equal in pitch to n, along most salient in-links."""
    members = voice.ids
    byid = {m.id: m for m in voice.notes}
    count = 0
    cur = voice.last
    while cur is not None and cur.ps == n.ps:
        count += 1
        preds = [p for p in graph.lt(cur.id) if p in members]
        cur = byid[preds[0]] if preds else None
    return count


def detect_pseudo_polyphonic_chains(score: Score, k_min: int = CHAIN_MIN) -> list[tuple[int, ...]]:
    """Maximal runs of equal pitch/duration notes spaced twice their duration apart."""
    index: dict[tuple[int, Fraction, Fraction], list[Note]] = {}
    for n in score.notes:
        index.setdefault((n.ps, n.bd, n.on), []).append(n)
    succ: dict[int, int] = {}
    has_pred: set[int] = set()
    for n in sorted(score.notes, key=lambda n: (n.on, n.id)):
        cands = index.get((n.ps, n.bd, n.on + 2 * n.bd), [])
        cands = [c for c in sorted(cands, key=lambda c: c.id) if c.id not in has_pred]
        if cands:
            succ[n.id] = cands[0].id
            has_pred.add(cands[0].id)
    chains = []
    for n in sorted(score.notes, key=lambda n: (n.on, n.id)):
        if n.id in has_pred or n.id not in succ:
            continue
        chain = [n.id]
        while chain[-1] in succ:
            chain.append(succ[chain[-1]])
        if len(chain) >= k_min:
            chains.append(tuple(chain))
    return chains


class ActiveVoiceSet:
    """Ordered active voices (highest first) identified by their last note ids.

    The empty voice is implicit and always available; it is represented by
    ``None`` wherever a voice slot may hold it.
    """

    def __init__(self, notes: dict[int, Note], graph: VoiceGraph | None = None,
                 horizon: Fraction | None = DEFAULT_HORIZON, order: Iterable[int] = ()):
        self.notes = notes
        self.graph = graph if graph is not None else VoiceGraph()
        self.horizon = None if horizon is None else Fraction(horizon)
        self.order: list[int] = list(order)
        self._voices: dict[int, Voice] = {}

    def __iter__(self):
        return iter(self.order)

    def __len__(self):
        return len(self.order)

    def __contains__(self, v):
        return v in self.order

    def copy(self) -> "ActiveVoiceSet":
        s = ActiveVoiceSet(self.notes, self.graph.copy(), self.horizon, self.order)
        s._voices = dict(self._voices)
        return s

    def voice(self, last: int) -> Voice:
        # A note's in-links are final once its chord is processed, so caching is safe.
        v = self._voices.get(last)
        if v is None:
            v = voice_of(self.notes[last], self.graph, self.notes, self.horizon)
            self._voices[last] = v
        return v

    def last(self, v: int) -> Note:
        return self.notes[v]

    def is_complete(self, v: int) -> bool:
        return not self.graph.rt(v)

    def complete(self) -> list[int]:
        return [v for v in self.order if self.is_complete(v)]

    def frontier(self) -> list[int]:
        """Voices none of whose continuations is itself active."""
        present = set(self.order)
        return [v for v in self.order if not any(s in present for s in self.graph.rt(v))]

    def related(self, v: int, w: int) -> bool:
        """Do the two voices share notes (one extends the other)?"""
        return v == w or v in self.voice(w).ids or w in self.voice(v).ids

    def has_continuation(self, v: int) -> bool:
        present = set(self.order)
        return any(s in present for s in self.graph.rt(v))

    def is_blocked(self, v: int, exclude: Iterable[int] = ()) -> bool:
        """Is the last note of ``v`` blocked by an unrelated frontier voice?

        A partial voice is covered by its continuation, so only frontier voices
        are consulted; ``exclude`` drops voices about to be continued.
        """
        last = self.notes[v]
        exclude = set(exclude)
        for w in self.frontier():
            if w in exclude:
                continue
            voice = self.voice(w)
            if len(voice.pairs) and not self.related(v, w) and blocked(last, voice):
                return True
        return False

    def filter_horizon(self, chord: Chord) -> None:
        if self.horizon is None:
            return
        self.order = [v for v in self.order if chord.onset - self.notes[v].off <= self.horizon]


def beat_horizon_filter(voices: ActiveVoiceSet, chord: Chord) -> ActiveVoiceSet:
    out = voices.copy()
    out.filter_horizon(chord)
    return out


def pair_crosses(voices: ActiveVoiceSet, parents: Sequence[int], n: Note,
                 candidates: Iterable[int] | None = None) -> bool:
    """Does linking ``parents`` to ``n`` cross any unrelated voice?

    ``candidates`` defaults to the frontier of the active set.
    """
    pool = voices.frontier() if candidates is None else list(candidates)
    for u in parents:
        lu = voices.notes[u]
        for w in pool:
            if voices.notes[w].on < lu.on:
                continue  # every note of w starts before the window opens
            if any(voices.related(w, p) for p in parents) or w == n.id:
                continue
            if n.id in voices.voice(w).ids:
                continue
            if crosses(lu, n, voices.voice(w)):
                return True
    return False
