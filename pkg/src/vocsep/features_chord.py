"""Features of joint chord assignments: merges, splits and whole-chord summaries.

A convergence row describes one note together with the voices it continues
(``v⃗``, in active-set order). A divergence row describes one voice together
with the chord notes continuing it (``n⃗``, highest first). Index names follow
the vectors: ``first``/``last`` are v0 and v-1 (or n0 and n-1), ``head`` is the
v0/v1 pair and ``tail`` the v-1/v-2 pair. Out-of-range indices clamp to the
vector's ends, so a singleton compares with itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ActiveVoiceSet, Chord, Voice, shared_divergent_note
from .features_note import (NOTE_DEFS, VOICE_DEFS, FeatureDef, ScoreContext, _bool, _dir,
                            _disc, _dist, _real, complete_position, direction, note_features,
                            voice_features)
from .graph import VoiceGraph
from .score import Note

Parents = tuple  # tuple of voice ids, or (None,) for the empty voice


@dataclass(frozen=True)
class JointAssignment:
    """Chord notes (in chord order) mapped to the voices they continue."""

    items: tuple[tuple[int, Parents], ...]

    @classmethod
    def from_mapping(cls, chord: Chord, mapping: Mapping[int, Sequence[int | None]],
                     order: Sequence[int]) -> "JointAssignment":
        pos = {v: i for i, v in enumerate(order)}
        out = []
        for n in chord.notes:
            vs = [v for v in mapping.get(n.id, ()) if v is not None]
            out.append((n.id, tuple(sorted(set(vs), key=pos.__getitem__)) if vs else (None,)))
        return cls(tuple(out))

    def as_dict(self) -> dict[int, list[int | None]]:
        return {nid: list(vs) for nid, vs in self.items}

    def flat(self) -> frozenset[tuple[int, int | None]]:
        return frozenset((nid, v) for nid, vs in self.items for v in vs)

    def vectors(self) -> dict[int, tuple[int, ...]]:
        """v⃗ per note, empty for notes given the empty voice."""
        return {nid: tuple(v for v in vs if v is not None) for nid, vs in self.items}

    def rev(self) -> dict[int, tuple[int, ...]]:
        """n⃗ per voice, in chord order (descending pitch)."""
        out: dict[int, list[int]] = {}
        for nid, vs in self.items:
            for v in vs:
                if v is not None:
                    out.setdefault(v, []).append(nid)
        return {v: tuple(ns) for v, ns in out.items()}

    def new_voices(self) -> int:
        return sum(1 for _, vs in self.items if vs == (None,))

    def sort_key(self) -> tuple:
        return tuple((nid, tuple(-1 if v is None else v for v in vs)) for nid, vs in self.items)


# ----------------------------------------------------------------- tables

CONV_DEFS: tuple[FeatureDef, ...] = (
    _real("c.mean_dist"), _dir("c.mean_dir"), _disc("c.mean", pitch=True),
    _real("c.first_dist"), _dir("c.first_dir"), _real("c.last_dist"), _dir("c.last_dir"),
    _real("c.ends_dist"), _real("c.head_dist"), _real("c.tail_dist"),
    _real("c.head_split_dist"), _real("c.tail_split_dist"),
    _real("c.first_ioi", "horizon"), _real("c.first_gap", "horizon"), _dir("c.first_gap_dir"),
    _real("c.last_ioi", "horizon"), _real("c.last_gap", "horizon"), _dir("c.last_gap_dir"),
    _dir("c.head_onset_dir"), _dir("c.tail_onset_dir"),
    _bool("c.first_complete"), _bool("c.last_complete"),
    _real("c.head_cp_diff"), _dir("c.head_cp_dir"), _real("c.tail_cp_diff"), _dir("c.tail_cp_dir"),
    _real("c.head_cvp_diff"), _real("c.tail_cvp_diff"),
    _real("c.head_zip_cp", "zero"), _disc("c.head_unq"), _disc("c.head_unsync"),
    _real("c.tail_zip_cp", "zero"), _disc("c.tail_unq"), _disc("c.tail_unsync"),
    _disc("c.size"), _disc("c.num_complete"), _disc("c.num_partial"),
    _bool("c.exists"),
)

DIV_DEFS: tuple[FeatureDef, ...] = (
    _real("d.mean_dist"), _dir("d.mean_dir"), _disc("d.mean", pitch=True),
    _real("d.first_dist"), _dir("d.first_dir"), _real("d.last_dist"), _dir("d.last_dir"),
    _real("d.ends_dist"), _real("d.head_dist"), _real("d.tail_dist"),
    _real("d.head_conv_dist"), _real("d.tail_conv_dist"),
    _real("d.first_ioi", "horizon"), _real("d.first_gap", "horizon"), _dir("d.first_gap_dir"),
    _real("d.last_ioi", "horizon"), _real("d.last_gap", "horizon"), _dir("d.last_gap_dir"),
    _real("d.head_cp_diff"), _dir("d.head_cp_dir"), _real("d.tail_cp_diff"), _dir("d.tail_cp_dir"),
    _real("d.first_cp_shift"), _real("d.last_cp_shift"),
    _disc("d.size"), _disc("d.linked"),
    _bool("d.exists"),
)

ASSIGN_DEFS: tuple[FeatureDef, ...] = (
    _real("a.mean_dist", "zero"), _bool("a.crossing"),
    _disc("a.unmatched"), _disc("a.nonempty"), _disc("a.empty"),
    _disc("a.converge"), _disc("a.diverge"),
)

CONV_ROW_DEFS = CONV_DEFS + NOTE_DEFS
DIV_ROW_DEFS = DIV_DEFS + VOICE_DEFS


def _at(seq: Sequence, i: int):
    """Element ``i`` of ``seq`` with out-of-range indices clamped to the ends."""
    return seq[min(max(i, 0), len(seq) - 1)] if i >= 0 else seq[max(len(seq) + i, 0)]


def zip_unq(u: Voice, w: Voice, ctx: ScoreContext) -> tuple[float, int, int]:
    """Onset synchronisation of two voices.

    Returns the mean chord-position difference over equal-onset note pairs
    (0 when there are none), the pair count and the number of distinct onsets.
    """
    by_on: dict = {}
    for m in w.notes:
        by_on.setdefault(m.on, []).append(m)
    diffs = [abs(ctx.position[m.id] - ctx.position[p.id])
             for m in u.notes for p in by_on.get(m.on, ()) if p.id != m.id]
    onsets = {m.on for m in u.notes} | {m.on for m in w.notes}
    return (float(np.mean(diffs)) if diffs else 0.0), len(diffs), len(onsets)


# ------------------------------------------------------------ convergence

def convergence_features(n: Note, vs: Sequence[int], voices: ActiveVoiceSet,
                         ctx: ScoreContext, exists: bool) -> list:
    """Raw CONV_DEFS values for note ``n`` continuing voices ``vs`` (active-set order)."""
    if not vs:
        raise ValueError("convergence features need at least one voice")
    notes, graph = voices.notes, voices.graph
    lasts = [notes[v] for v in vs]
    mean = float(np.mean([m.ps for m in lasts]))
    v0, v1, vm1, vm2 = _at(vs, 0), _at(vs, 1), _at(vs, -1), _at(vs, -2)
    l0, l1, lm1, lm2 = notes[v0], notes[v1], notes[vm1], notes[vm2]

    def split(a, b):
        if a == b:
            return None
        d = shared_divergent_note(voices.voice(a), voices.voice(b), graph)
        return _dist(n.ps, d.ps if d else None)

    def sync(a, b):
        zc, pairs, unq = zip_unq(voices.voice(a), voices.voice(b), ctx)
        return zc, unq, abs(unq - pairs)

    head, tail = sync(v0, v1), sync(vm1, vm2)
    complete = [voices.is_complete(v) for v in vs]
    return [
        abs(n.ps - mean), direction(n.ps, mean), mean,
        float(abs(n.ps - l0.ps)), direction(n.ps, l0.ps),
        float(abs(n.ps - lm1.ps)), direction(n.ps, lm1.ps),
        float(abs(l0.ps - lm1.ps)), float(abs(l0.ps - l1.ps)), float(abs(lm1.ps - lm2.ps)),
        split(v0, v1), split(vm1, vm2),
        float(n.on - l0.on), float(max(n.on - l0.off, 0)), direction(n.on, l0.off),
        float(n.on - lm1.on), float(max(n.on - lm1.off, 0)), direction(n.on, lm1.off),
        direction(l0.on, l1.on), direction(lm1.on, lm2.on),
        int(voices.is_complete(v0)), int(voices.is_complete(vm1)),
        float(abs(ctx.position[v0] - ctx.position[v1])), direction(ctx.position[v0], ctx.position[v1]),
        float(abs(ctx.position[vm1] - ctx.position[vm2])), direction(ctx.position[vm1], ctx.position[vm2]),
        float(complete_position(voices, v1) - complete_position(voices, v0)),
        float(complete_position(voices, vm2) - complete_position(voices, vm1)),
        head[0], head[1], head[2], tail[0], tail[1], tail[2],
        len(vs), sum(complete), len(vs) - sum(complete),
        int(exists),
    ]


# ------------------------------------------------------------- divergence

def merged_into(v: int, graph: VoiceGraph, notes: Mapping[int, Note]) -> list[Note]:
    """conv(v): predecessors of the voice's last note, highest first."""
    return sorted((notes[p] for p in graph.lt(v)), key=lambda m: (-m.ps, m.id))


def divergence_features(ns: Sequence[int], v: int, voices: ActiveVoiceSet, ctx: ScoreContext,
                        exists: bool, graph: VoiceGraph | None = None) -> list:
    """Raw DIV_DEFS values for voice ``v`` continued by notes ``ns`` (highest first).

    ``graph`` is the link graph used for the already-linked count; it defaults
    to the active set's graph.
    """
    if not ns:
        raise ValueError("divergence features need at least one note")
    notes = voices.notes
    graph = graph if graph is not None else voices.graph
    last = notes[v]
    ms = [notes[i] for i in ns]
    mean = float(np.mean([m.ps for m in ms]))
    n0, n1, nm1, nm2 = _at(ms, 0), _at(ms, 1), _at(ms, -1), _at(ms, -2)
    conv = merged_into(v, voices.graph, notes)
    top = conv[0].ps if conv else None
    bottom = conv[-1].ps if conv else None
    cp = ctx.position
    return [
        abs(last.ps - mean), direction(last.ps, mean), mean,
        float(abs(last.ps - n0.ps)), direction(n0.ps, last.ps),
        float(abs(last.ps - nm1.ps)), direction(nm1.ps, last.ps),
        float(abs(n0.ps - nm1.ps)), float(abs(n0.ps - n1.ps)), float(abs(nm1.ps - nm2.ps)),
        _dist(n0.ps, top), _dist(nm1.ps, bottom),
        float(n0.on - last.on), float(max(n0.on - last.off, 0)), direction(n0.on, last.off),
        float(nm1.on - last.on), float(max(nm1.on - last.off, 0)), direction(nm1.on, last.off),
        float(abs(cp[n0.id] - cp[n1.id])), direction(cp[n0.id], cp[n1.id]),
        float(abs(cp[nm1.id] - cp[nm2.id])), direction(cp[nm1.id], cp[nm2.id]),
        float(cp[n0.id] - cp[v]), float(cp[nm1.id] - cp[v]),
        len(ns), sum(1 for i in ns if v in graph.lt(i)),
        int(exists),
    ]


# ------------------------------------------------------------- assignment

def assignment_features(chord: Chord, j: JointAssignment, voices: ActiveVoiceSet,
                        crossing: Mapping[tuple[int, int], bool]) -> list:
    """Raw ASSIGN_DEFS values; ``crossing`` gives x(n, v) for every non-empty pair."""
    notes = voices.notes
    dists = [abs(notes[nid].ps - notes[v].ps) for nid, vs in j.items for v in vs if v is not None]
    used = {v for _, vs in j.items for v in vs if v is not None}
    rev = j.rev()
    return [
        float(np.mean(dists)) if dists else 0.0,
        int(any(crossing[(nid, v)] for nid, vs in j.items for v in vs if v is not None)),
        abs(len(chord.notes) - len(used)),
        len(used),
        j.new_voices(),
        sum(1 for _, vs in j.items if len(vs) > 1),
        sum(1 for ns in rev.values() if len(ns) > 1),
    ]


def conv_row(n: Note, vs: Sequence[int], voices: ActiveVoiceSet, ctx: ScoreContext, exists: bool) -> list:
    return convergence_features(n, vs, voices, ctx, exists) + note_features(n, ctx)


def div_row(ns: Sequence[int], v: int, voices: ActiveVoiceSet, ctx: ScoreContext, exists: bool,
            voice_raw: list | None = None) -> list:
    vr = voice_raw if voice_raw is not None else voice_features(v, voices, ctx)
    return divergence_features(ns, v, voices, ctx, exists) + vr


def assignment_rows(chord: Chord, j: JointAssignment, voices: ActiveVoiceSet, ctx: ScoreContext,
                    crossing: Mapping[tuple[int, int], bool]) -> tuple[list, list, list]:
    """Raw convergence rows, divergence rows and the assignment row of ``j``."""
    vec = j.vectors()
    rev = j.rev()
    conv_exists = any(len(vs) > 1 for vs in vec.values())
    div_exists = any(len(ns) > 1 for ns in rev.values())
    notes = voices.notes
    convs = [conv_row(notes[nid], vs, voices, ctx, conv_exists) for nid, vs in vec.items() if vs]
    divs = [div_row(ns, v, voices, ctx, div_exists) for v, ns in sorted(rev.items())]
    return convs, divs, assignment_features(chord, j, voices, crossing)


def collect(rows: Iterable[list], defs: Sequence[FeatureDef], into: dict) -> dict:
    for raw in rows:
        for d, x in zip(defs, raw):
            into.setdefault(d.name, []).append(x)
    return into
