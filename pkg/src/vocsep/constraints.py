"""Link constraints shared by both neural decoders and the output audit."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .core import DEFAULT_HORIZON, ActiveVoiceSet, Chord, Voice, crosses, voice_of
from .graph import VoiceGraph
from .score import Note

GAP_PITCH_LIMIT = 6


@dataclass(frozen=True)
class Constraints:
    """Caps and rules for one decode.

    ``alpha`` caps the in-links of a note and ``beta`` the out-links of a note.
    A note that splits into two or more voices may not jump ``gap_pitch`` half
    steps or more to a target that starts after a rest.
    """

    alpha: int = 2
    beta: int = 2
    horizon: Fraction | None = DEFAULT_HORIZON
    gap_pitch: int = GAP_PITCH_LIMIT
    gap_rule: bool = True
    sync_crossing: bool = True
    chains: bool = True

    def __post_init__(self):
        if self.alpha < 1 or self.beta < 1:
            raise ValueError("alpha and beta must be at least 1")


def gap_jump(src: Note, dst: Note, limit: int) -> bool:
    """Would ``src -> dst`` be a forbidden split target (rest plus a wide leap)?"""
    return dst.on > src.off and abs(dst.ps - src.ps) >= limit


def divergence_ok(src: Note, existing: int, targets: Sequence[Note], cons: Constraints) -> bool:
    """Check the new targets of ``src`` given ``existing`` earlier out-links."""
    if existing + len(targets) > cons.beta:
        return False
    if not cons.gap_rule or existing + len(targets) < 2:
        return True
    return not any(gap_jump(src, t, cons.gap_pitch) for t in targets)


class ChainRules:
    """Pseudo-polyphonic chains: each chain note continues its chain predecessor
    only, and a chain note followed by another accepts no other continuation."""

    def __init__(self, chains: Sequence[Sequence[int]] = ()):
        self.next: dict[int, int] = {}
        for ch in chains:
            for a, b in zip(ch, ch[1:]):
                self.next[a] = b
        self.prev = {b: a for a, b in self.next.items()}

    def forced(self, nid: int) -> int | None:
        return self.prev.get(nid)

    def allows(self, v: int, nid: int) -> bool:
        if nid in self.prev:
            return self.prev[nid] == v
        return v not in self.next


def overlay_voice(n: Note, parents: Sequence[int], voices: ActiveVoiceSet) -> Voice:
    """The voice ending at ``n`` if ``n`` were linked to ``parents``.

    Same traversal as :func:`voice_of`, with the extra in-links of ``n``.
    """
    notes, graph, horizon = voices.notes, voices.graph, voices.horizon

    def near(m: int) -> bool:
        return horizon is None or n.on - notes[m].off <= horizon

    seen = {n.id}
    stack = [p for p in parents if near(p)]
    seen.update(stack)
    while stack:
        for p in graph.lt(stack.pop()):
            if p not in seen and near(p):
                seen.add(p)
                stack.append(p)
    members = tuple(sorted((notes[i] for i in seen), key=lambda m: (m.on, -m.ps, m.id)))
    pairs = [(notes[p], m) for m in members if m.id != n.id for p in graph.lt(m.id) if p in seen]
    pairs += [(notes[p], n) for p in parents if p in seen]
    return Voice(n, members, tuple(pairs))


class SyncChecker:
    """Caches overlay voices of the current chord for synchronous crossing tests."""

    def __init__(self, voices: ActiveVoiceSet):
        self.voices = voices
        self._cache: dict[tuple[int, tuple[int, ...]], Voice] = {}
        self._crossing: dict[tuple, bool] = {}

    def voice(self, n: Note, parents: Sequence[int]) -> Voice:
        key = (n.id, tuple(sorted(parents)))
        got = self._cache.get(key)
        if got is None:
            got = overlay_voice(n, parents, self.voices)
            self._cache[key] = got
        return got

    def crosses_voice(self, n: Note, v: int, other: Note, other_parents: Sequence[int]) -> bool:
        """Does ``v -> n`` cross the voice newly reaching ``other``?"""
        if not other_parents or v in other_parents:
            return False
        key = (n.id, v, other.id, tuple(other_parents))
        got = self._crossing.get(key)
        if got is None:
            w = self.voice(other, other_parents)
            got = self._crossing[key] = v not in w.ids and crosses(self.voices.notes[v], n, w)
        return got

    def conflict(self, n: Note, parents: Sequence[int], other: Note, other_parents: Sequence[int]) -> bool:
        """Do the new links of two notes of one chord cross each other's voices?"""
        return (any(self.crosses_voice(n, v, other, other_parents) for v in parents)
                or any(self.crosses_voice(other, u, n, parents) for u in other_parents))


def assignment_violations(chord: Chord, assignment: Mapping[int, Sequence[int | None]],
                          voices: ActiveVoiceSet, cons: Constraints,
                          chains: ChainRules | None = None) -> list[str]:
    """Constraint violations of a joint assignment against the active set."""
    notes = voices.notes
    graph = voices.graph
    problems = []
    targets: dict[int, list[Note]] = {}
    for nid, vs in assignment.items():
        real = [v for v in vs if v is not None]
        if len(real) != len(vs) and len(vs) != 1:
            problems.append(f"note {nid} mixes the empty voice with real voices")
        if len(real) > cons.alpha:
            problems.append(f"note {nid} has {len(real)} in-links")
        for v in real:
            if v not in voices.order:
                problems.append(f"note {nid} continues inactive voice {v}")
            targets.setdefault(v, []).append(notes[nid])
            if chains is not None and not chains.allows(v, nid):
                problems.append(f"link {v}->{nid} breaks a repeat chain")
        if chains is not None and chains.forced(nid) is not None and chains.forced(nid) in voices.order:
            if list(real) != [chains.forced(nid)]:
                problems.append(f"note {nid} must continue its chain")
    for v, ts in targets.items():
        if not divergence_ok(notes[v], len(graph.rt(v)), ts, cons):
            problems.append(f"voice {v} splits beyond limits")
    if cons.sync_crossing:
        sync = SyncChecker(voices)
        items = [(nid, [v for v in vs if v is not None]) for nid, vs in assignment.items()]
        for i, (nid, vs) in enumerate(items):
            for oid, ovs in items[i + 1:]:
                if sync.conflict(notes[nid], vs, notes[oid], ovs):
                    problems.append(f"notes {nid} and {oid} cross at the same onset")
    return problems


def audit_graph(graph: VoiceGraph, notes: Mapping[int, Note], cons: Constraints,
                sync: bool | None = None) -> list[str]:
    """Check a decoded graph against every link constraint."""
    sync = cons.sync_crossing if sync is None else sync
    problems = []
    for a, b in sorted(graph.links()):
        if cons.horizon is not None and notes[b].on - notes[a].off > cons.horizon:
            problems.append(f"link {a}->{b} exceeds the beat horizon")
        if notes[b].on <= notes[a].on:
            problems.append(f"link {a}->{b} does not move forward")
    for m in sorted(graph.nodes()):
        if len(graph.lt(m)) > cons.alpha:
            problems.append(f"note {m} has {len(graph.lt(m))} in-links")
        outs = [notes[t] for t in graph.rt(m)]
        if len(outs) > cons.beta:
            problems.append(f"note {m} has {len(outs)} out-links")
        if cons.gap_rule and len(outs) >= 2:
            first = min(t.on for t in outs)
            earliest = [t for t in outs if t.on == first]
            checked = [t for t in outs if t.on > first] + (earliest if len(earliest) >= 2 else [])
            for t in checked:
                if gap_jump(notes[m], t, cons.gap_pitch):
                    problems.append(f"split {m}->{t.id} leaps across a rest")
    if sync:
        by_onset: dict[Fraction, list[Note]] = {}
        for m in graph.nodes():
            by_onset.setdefault(notes[m].on, []).append(notes[m])
        voice_cache: dict[int, Voice] = {}

        def vo(n: Note) -> Voice:
            if n.id not in voice_cache:
                voice_cache[n.id] = voice_of(n, graph, dict(notes), cons.horizon)
            return voice_cache[n.id]

        for onset in sorted(by_onset):
            group = sorted(by_onset[onset], key=lambda n: n.id)
            for n in group:
                for v in graph.lt(n.id):
                    for other in group:
                        ps = graph.lt(other.id)
                        if other.id == n.id or not ps or v in ps:
                            continue
                        w = vo(other)
                        if v not in w.ids and crosses(notes[v], n, w):
                            problems.append(f"link {v}->{n.id} crosses the voice of {other.id}")
    return problems
