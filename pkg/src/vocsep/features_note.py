"""Note, voice and pair features for scoring a note against an active voice.

Raw values are produced per feature name. A :class:`FeatureConfig`, fitted on
training data only, turns them into a fixed-length vector: directions become
three-way one-hots ordered (greater, equal, less), discrete values become
one-hots over a small range, a small vocabulary or ten equal slices, and real
values are scaled by their fitted maximum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (DEFAULT_HORIZON, TOP_BOT_K, ActiveVoiceSet, Chord, Voice,
                   build_chord_sequence, consecutive_repetition,
                   detect_pseudo_polyphonic_chains, pair_crosses, shared_divergent_note,
                   top_bot)
from .neural import config_hash
from .score import Note, Score

MAJOR_DEGREES = {0: 1, 2: 2, 4: 3, 5: 4, 7: 5, 9: 6, 11: 7}
CHROMATIC = 0
INTERVAL_NUMBER = {0: 1, 1: 2, 2: 2, 3: 3, 4: 3, 5: 4, 6: 4, 7: 5, 8: 6, 9: 6, 10: 7, 11: 7}
SLICES = 10
SMALL_RANGE = 12


class FeatureConfigError(KeyError):
    pass


# ---------------------------------------------------------------- definitions

@dataclass(frozen=True)
class FeatureDef:
    """``kind`` is one of real, dir, bool, disc. ``null`` applies to real values:
    ``max`` (fitted maximum), ``horizon`` (beat horizon) or ``zero``."""

    name: str
    kind: str
    null: str = "max"
    pitch: bool = False


def _real(name, null="max"):
    return FeatureDef(name, "real", null)


def _dir(name):
    return FeatureDef(name, "dir")


def _bool(name):
    return FeatureDef(name, "bool")


def _disc(name, pitch=False):
    return FeatureDef(name, "disc", pitch=pitch)


K = TOP_BOT_K

NOTE_DEFS: tuple[FeatureDef, ...] = (
    _disc("n.pitch", pitch=True),
    _real("n.above_dist"),
    _real("n.below_dist"),
    _disc("n.beats"),
    _disc("n.chord_pos"),
    _disc("n.chord_size"),
    _disc("n.degree"),
    _disc("n.chord_step"),
    _disc("n.quarters"),
    _disc("n.beat_strength"),
)

VOICE_DEFS: tuple[FeatureDef, ...] = (
    _disc("v.pitch", pitch=True),
    _disc("v.mean_pitch", pitch=True),
    _disc("v.max_pitch", pitch=True),
    _disc("v.min_pitch", pitch=True),
    _real("v.above_dist"),
    _real("v.below_dist"),
    _real("v.upper_voice_dist"),
    _real("v.lower_voice_dist"),
    _dir("v.upper_voice_dir"),
    _dir("v.lower_voice_dir"),
    *(_real(f"v.top_above_dist.{i}") for i in range(K)),
    *(_real(f"v.bot_below_dist.{i}") for i in range(K)),
    *(_real(f"v.top_step_dist.{i}") for i in range(K)),
    *(_real(f"v.bot_step_dist.{i}") for i in range(K)),
    *(_dir(f"v.top_step_dir.{i}") for i in range(K)),
    *(_dir(f"v.bot_step_dir.{i}") for i in range(K)),
    _bool("v.blocked"),
    _disc("v.beats"),
    _real("v.upper_voice_ioi", "horizon"),
    _real("v.lower_voice_ioi", "horizon"),
    _dir("v.upper_voice_onset_dir"),
    _dir("v.lower_voice_onset_dir"),
    *(_real(f"v.top_gap.{i}", "horizon") for i in range(K)),
    *(_real(f"v.bot_gap.{i}", "horizon") for i in range(K)),
    _disc("v.top_rests"),
    _disc("v.bot_rests"),
    _disc("v.chord_pos"),
    _disc("v.voice_pos"),
    _disc("v.complete_pos"),
    _disc("v.chord_size"),
    _disc("v.num_voices"),
    _disc("v.num_complete"),
    _disc("v.size"),
    _disc("v.top_size"),
    _disc("v.bot_size"),
    _disc("v.depth"),
    *(_bool(f"v.top_has_above.{i}") for i in range(K)),
    *(_bool(f"v.bot_has_below.{i}") for i in range(K)),
    _disc("v.top_count_above"),
    _disc("v.bot_count_below"),
    _disc("v.out_degree"),
    _disc("v.degree"),
    _disc("v.chord_step"),
    _disc("v.quarters"),
    _disc("v.beat_strength"),
)

PAIR_DEFS: tuple[FeatureDef, ...] = (
    _real("p.dist"),
    _dir("p.dir"),
    _real("p.mean_dist"),
    _dir("p.mean_dir"),
    _real("p.max_dist"),
    _dir("p.max_dir"),
    _real("p.min_dist"),
    _dir("p.min_dir"),
    _real("p.std_gap"),
    _bool("p.within_std"),
    _disc("p.repeats"),
    _real("p.upper_split_dist"),
    _dir("p.upper_split_dir"),
    _real("p.lower_split_dist"),
    _dir("p.lower_split_dir"),
    _real("p.ioi", "horizon"),
    _real("p.gap", "horizon"),
    _dir("p.gap_dir"),
    _real("p.beats_diff"),
    _dir("p.beats_dir"),
    _real("p.chord_pos_diff"),
    _dir("p.chord_pos_dir"),
    _real("p.voice_pos_diff"),
    _dir("p.voice_pos_dir"),
    _real("p.complete_pos_diff"),
    _dir("p.complete_pos_dir"),
    _real("p.chord_size_diff"),
    _real("p.voices_size_diff"),
    _disc("p.onsets_between"),
    _disc("p.crosses"),
    _real("p.degree_diff"),
    _dir("p.degree_dir"),
    _real("p.chord_step_diff"),
    _dir("p.chord_step_dir"),
    _real("p.quarters_diff"),
    _dir("p.quarters_dir"),
    _real("p.strength_diff"),
    _dir("p.strength_dir"),
    _bool("p.same_pitch"),
    _bool("p.same_beats"),
    _bool("p.double_spacing"),
    _bool("p.note_in_chain"),
    _bool("p.last_in_chain"),
    _bool("p.chain_one_back"),
    _bool("p.chain_adjacent"),
    _bool("p.chain_supported"),
    _bool("p.note_chain_only"),
    _bool("p.last_chain_only"),
)

EMPTY_DEF = _bool("empty")


# ------------------------------------------------------------ tonal context

def beat_strength(pos: Fraction, num: int) -> float:
    """Metrical weight of a position (in beats) within a measure of ``num`` beats."""
    if pos == 0:
        return 1.0
    if num >= 4 and num % 2 == 0 and pos == Fraction(num, 2):
        return 0.5
    if pos.denominator == 1:
        return 0.25
    if (2 * pos).denominator == 1:
        return 0.125
    return 0.0625


def scale_degree(ps: int, key: int) -> int:
    """Major-mode scale degree 1..7 from the key signature, 0 for chromatic notes."""
    tonic = (7 * key) % 12
    return MAJOR_DEGREES.get((ps - tonic) % 12, CHROMATIC)


def chord_step(ps: int, root_ps: int) -> int:
    """Diatonic interval number 1..7 above the chord's lowest note."""
    return INTERVAL_NUMBER[(ps - root_ps) % 12]


class ScoreContext:
    """Per-score lookups shared by every feature: chords, tonal and chain data."""

    def __init__(self, score: Score, horizon: Fraction | None = DEFAULT_HORIZON,
                 chains: Sequence[tuple[int, ...]] | None = None):
        self.score = score
        self.notes = score.by_id
        self.chords: list[Chord] = build_chord_sequence(score)
        self.horizon = Fraction(horizon) if horizon is not None else None
        self.chord_of: dict[int, Chord] = {}
        self.position: dict[int, int] = {}
        for c in self.chords:
            for i, n in enumerate(c.notes):
                self.chord_of[n.id] = c
                self.position[n.id] = i + 1
        self.degree: dict[int, int] = {}
        self.step: dict[int, int] = {}
        self.strength: dict[int, float] = {}
        for c in self.chords:
            root = min(n.ps for n in c.notes)
            for n in c.notes:
                self.degree[n.id] = scale_degree(n.ps, score.key)
                self.step[n.id] = chord_step(n.ps, root)
                num, _ = score.time_signature_at(n.measure)
                pos = n.on - score.measure_start(n.measure)
                self.strength[n.id] = beat_strength(pos % num if num else pos, num)
        self.chains = list(chains) if chains is not None else detect_pseudo_polyphonic_chains(score)
        self.chain_notes = {i for ch in self.chains for i in ch}
        self.chain_onsets = {self.notes[i].on for i in self.chain_notes}
        self.chain_next: dict[int, int] = {}
        for ch in self.chains:
            for a, b in zip(ch, ch[1:]):
                self.chain_next[a] = b
        self.chain_prev = {b: a for a, b in self.chain_next.items()}

    @property
    def horizon_value(self) -> float:
        return float(self.horizon) if self.horizon is not None else float(DEFAULT_HORIZON)

    def above(self, nid: int) -> Note | None:
        c, p = self.chord_of[nid], self.position[nid]
        return c.notes[p - 2] if p > 1 else None

    def below(self, nid: int) -> Note | None:
        c, p = self.chord_of[nid], self.position[nid]
        return c.notes[p] if p < len(c.notes) else None


# -------------------------------------------------------------- raw values

def direction(a, b) -> int | None:
    if a is None or b is None:
        return None
    return int(a > b) - int(a < b)


def _dist(a, b) -> float | None:
    if a is None or b is None:
        return None
    return float(abs(a - b))


def note_features(n: Note, ctx: ScoreContext) -> list:
    above, below = ctx.above(n.id), ctx.below(n.id)
    return [
        n.ps,
        _dist(n.ps, above.ps if above else None),
        _dist(n.ps, below.ps if below else None),
        float(n.bd),
        ctx.position[n.id],
        len(ctx.chord_of[n.id].notes),
        ctx.degree[n.id],
        ctx.step[n.id],
        float(n.ql),
        ctx.strength[n.id],
    ]


def complete_neighbors(voices: ActiveVoiceSet, v: int) -> tuple[int | None, int | None]:
    """ab(v) and bl(v): the nearest complete voices above and below ``v``."""
    order = voices.order
    i = order.index(v)
    up = next((w for w in reversed(order[:i]) if voices.is_complete(w)), None)
    down = next((w for w in order[i + 1:] if voices.is_complete(w)), None)
    return up, down


def complete_position(voices: ActiveVoiceSet, v: int) -> int:
    """cvp(v): 1 + number of complete voices above ``v``."""
    i = voices.order.index(v)
    return 1 + sum(1 for w in voices.order[:i] if voices.is_complete(w))


def _chain_steps(chain: list[Note], graph, members: dict[int, Note], pick_high: bool):
    """Pairs (m, predecessor of m) along a boundary chain, one per chain note."""
    out = []
    for m in chain:
        preds = [members[p] for p in graph.lt(m.id) if p in members]
        if not preds:
            out.append((m, None))
            continue
        if pick_high:
            out.append((m, max(preds, key=lambda q: (q.ps, q.on, -q.id))))
        else:
            out.append((m, min(preds, key=lambda q: (q.ps, -q.on, q.id))))
    return out


def voice_features(v: int, voices: ActiveVoiceSet, ctx: ScoreContext) -> list:
    voice = voices.voice(v)
    last = voice.last
    graph = voices.graph
    pitches = [m.ps for m in voice.notes]
    up, down = complete_neighbors(voices, v)
    lu = voices.notes[up] if up is not None else None
    ld = voices.notes[down] if down is not None else None
    above, below = ctx.above(last.id), ctx.below(last.id)
    top, bot = top_bot(voice, graph, K)
    members = {m.id: m for m in voice.notes}
    top_steps = _chain_steps(top, graph, members, True)
    bot_steps = _chain_steps(bot, graph, members, False)

    def pad(values, fill=None):
        values = list(values)[:K]
        return values + [fill] * (K - len(values))

    top_above = pad(_dist(m.ps, ctx.above(m.id).ps if ctx.above(m.id) else None) for m in top)
    bot_below = pad(_dist(m.ps, ctx.below(m.id).ps if ctx.below(m.id) else None) for m in bot)
    top_step = pad(_dist(m.ps, p.ps if p else None) for m, p in top_steps)
    bot_step = pad(_dist(m.ps, p.ps if p else None) for m, p in bot_steps)
    top_dir = pad(direction(m.ps, p.ps if p else None) for m, p in top_steps)
    bot_dir = pad(direction(m.ps, p.ps if p else None) for m, p in bot_steps)
    top_gap = pad(float(max(m.on - p.off, 0)) if p else None for m, p in top_steps)
    bot_gap = pad(float(max(m.on - p.off, 0)) if p else None for m, p in bot_steps)
    top_rests = sum(1 for m, p in top_steps if p is not None and m.on > p.off)
    bot_rests = sum(1 for m, p in bot_steps if p is not None and m.on > p.off)
    top_has = [int(ctx.position[m.id] != 1) for m in top]
    bot_has = [int(ctx.position[m.id] != len(ctx.chord_of[m.id].notes)) for m in bot]
    memo: dict = {}
    return [
        last.ps,
        float(np.mean(pitches)),
        max(pitches),
        min(pitches),
        _dist(last.ps, above.ps if above else None),
        _dist(last.ps, below.ps if below else None),
        _dist(last.ps, lu.ps if lu else None),
        _dist(last.ps, ld.ps if ld else None),
        direction(last.ps, lu.ps if lu else None),
        direction(last.ps, ld.ps if ld else None),
        *top_above, *bot_below, *top_step, *bot_step, *top_dir, *bot_dir,
        int(voices.is_blocked(v)),
        float(last.bd),
        _dist(last.on, lu.on if lu else None),
        _dist(last.on, ld.on if ld else None),
        direction(last.on, lu.on if lu else None),
        direction(last.on, ld.on if ld else None),
        *top_gap, *bot_gap,
        top_rests,
        bot_rests,
        ctx.position[last.id],
        voices.order.index(v) + 1,
        complete_position(voices, v),
        len(ctx.chord_of[last.id].notes),
        len(voices.order),
        sum(1 for w in voices.order if voices.is_complete(w)),
        len(voice.notes),
        len(top),
        len(bot),
        graph.depth(last.id, memo),
        *pad(top_has, 0), *pad(bot_has, 0),
        sum(top_has),
        sum(bot_has),
        len(graph.rt(last.id)),
        ctx.degree[last.id],
        ctx.step[last.id],
        float(last.ql),
        ctx.strength[last.id],
    ]


def pair_features(n: Note, v: int, voices: ActiveVoiceSet, ctx: ScoreContext,
                  crossing: bool | None = None) -> list:
    voice = voices.voice(v)
    last = voice.last
    graph = voices.graph
    pitches = np.array([m.ps for m in voice.notes], dtype=np.float64)
    mean = float(pitches.mean())
    std = float(pitches.std())  # population deviation
    mean_dist = abs(n.ps - mean)
    up, down = complete_neighbors(voices, v)
    split_up = shared_divergent_note(voice, voices.voice(up), graph) if up is not None else None
    split_down = shared_divergent_note(voice, voices.voice(down), graph) if down is not None else None
    vp = voices.order.index(v) + 1
    cvp = complete_position(voices, v)
    cp = ctx.position[n.id]
    if crossing is None:
        crossing = pair_crosses(voices, [v], n)
    same_pitch = n.ps == last.ps
    same_beats = n.bd == last.bd
    double = n.on == last.off + last.bd
    pp_n = n.id in ctx.chain_notes
    pp_l = last.id in ctx.chain_notes
    pp_back = (n.on - n.bd) in ctx.chain_onsets
    return [
        float(abs(n.ps - last.ps)),
        direction(n.ps, last.ps),
        mean_dist,
        direction(n.ps, mean),
        float(abs(n.ps - pitches.max())),
        direction(n.ps, pitches.max()),
        float(abs(n.ps - pitches.min())),
        direction(n.ps, pitches.min()),
        abs(mean_dist - std),
        int(mean_dist < std),
        consecutive_repetition(n, voice, graph),
        _dist(n.ps, split_up.ps if split_up else None),
        direction(n.ps, split_up.ps if split_up else None),
        _dist(n.ps, split_down.ps if split_down else None),
        direction(n.ps, split_down.ps if split_down else None),
        float(abs(n.on - last.on)),
        float(max(n.on - last.off, 0)),
        direction(n.on, last.off),
        float(abs(n.bd - last.bd)),
        direction(n.bd, last.bd),
        float(abs(cp - ctx.position[last.id])),
        direction(cp, ctx.position[last.id]),
        float(abs(cp - vp)),
        direction(cp, vp),
        float(abs(cp - cvp)),
        direction(cp, cvp),
        float(abs(len(ctx.chord_of[n.id].notes) - len(ctx.chord_of[last.id].notes))),
        float(abs(len(ctx.chord_of[n.id].notes) - len(voices.order))),
        ctx.chord_of[n.id].index - ctx.chord_of[last.id].index,
        int(crossing),
        float(abs(ctx.degree[n.id] - ctx.degree[last.id])),
        direction(ctx.degree[n.id], ctx.degree[last.id]),
        float(abs(ctx.step[n.id] - ctx.step[last.id])),
        direction(ctx.step[n.id], ctx.step[last.id]),
        float(abs(n.ql - last.ql)),
        direction(n.ql, last.ql),
        abs(ctx.strength[n.id] - ctx.strength[last.id]),
        direction(ctx.strength[n.id], ctx.strength[last.id]),
        int(same_pitch),
        int(same_beats),
        int(double),
        int(pp_n),
        int(pp_l),
        int(pp_back),
        int(same_pitch and same_beats and double and pp_n and not pp_back),
        int(not pp_n and not pp_l and pp_back),
        int(pp_n and not pp_l),
        int(not pp_n and pp_l),
    ]


# ---------------------------------------------------------- discretization

class FeatureConfig:
    """Immutable per-feature encoding parameters fitted on training data."""

    def __init__(self, params: Mapping[str, Mapping], horizon: float):
        self._params = MappingProxyType({k: MappingProxyType(dict(v)) for k, v in params.items()})
        self.horizon = float(horizon)

    @property
    def params(self) -> Mapping[str, Mapping]:
        return self._params

    def to_json(self) -> dict:
        return {"version": 1, "horizon": self.horizon,
                "features": {k: dict(v) for k, v in sorted(self._params.items())}}

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureConfig":
        return cls(doc["features"], doc["horizon"])

    def hash(self) -> str:
        return config_hash(self.to_json())

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def fit(cls, defs: Iterable[FeatureDef], values: Mapping[str, Sequence],
            horizon: float = float(DEFAULT_HORIZON)) -> "FeatureConfig":
        params = {}
        for d in defs:
            if d.name in params:
                continue
            seen = [v for v in values.get(d.name, ()) if v is not None]
            params[d.name] = _fit_one(d, seen)
        return cls(params, horizon)

    def width(self, d: FeatureDef) -> int:
        p = self._lookup(d)
        if d.kind == "dir":
            return 3
        if d.kind in ("bool", "real"):
            return 1
        if p["mode"] == "int":
            return p["hi"] - p["lo"] + 1
        if p["mode"] == "vocab":
            return len(p["values"])
        return SLICES

    def layout(self, defs: Sequence[FeatureDef]) -> dict[str, slice]:
        out, start = {}, 0
        for d in defs:
            w = self.width(d)
            out[d.name] = slice(start, start + w)
            start += w
        return out

    def length(self, defs: Sequence[FeatureDef]) -> int:
        return sum(self.width(d) for d in defs)

    def _lookup(self, d: FeatureDef) -> Mapping:
        try:
            return self._params[d.name]
        except KeyError:
            raise FeatureConfigError(f"feature config has no entry for {d.name!r}") from None

    def encode(self, defs: Sequence[FeatureDef], raw: Sequence, out: np.ndarray | None = None) -> np.ndarray:
        if len(defs) != len(raw):
            raise ValueError("raw values do not match feature definitions")
        vec = out if out is not None else np.zeros(self.length(defs))
        pos = 0
        for d, x in zip(defs, raw):
            p = self._lookup(d)
            w = self.width(d)
            if d.kind == "dir":
                s = 0 if x is None else int(np.sign(x))
                vec[pos + (1 - s)] = 1.0  # order: >, =, <
            elif d.kind == "bool":
                vec[pos] = 1.0 if x else 0.0
            elif d.kind == "real":
                vec[pos] = _encode_real(x, p, d, self.horizon)
            else:
                vec[pos + _disc_index(float(x) if x is not None else None, p)] = 1.0
            pos += w
        return vec


def _fit_one(d: FeatureDef, seen: list) -> dict:
    if d.kind in ("dir", "bool"):
        return {"kind": d.kind}
    if d.kind == "real":
        top = max((abs(float(v)) for v in seen), default=0.0)
        return {"kind": "real", "max": top if top > 0 else 1.0}
    vals = sorted({float(v) for v in seen})
    if not vals:
        return {"kind": "disc", "mode": "int", "lo": 0, "hi": 0}
    if all(v.is_integer() for v in vals) and vals[-1] - vals[0] + 1 <= SMALL_RANGE:
        return {"kind": "disc", "mode": "int", "lo": int(vals[0]), "hi": int(vals[-1])}
    if len(vals) <= SMALL_RANGE:
        return {"kind": "disc", "mode": "vocab", "values": vals}
    lo, hi = vals[0], vals[-1]
    if d.pitch:
        lo, hi = math.floor(lo / 10) * 10.0, math.ceil(hi / 10) * 10.0
        if hi == lo:
            hi = lo + 10.0
    return {"kind": "disc", "mode": "slices", "lo": lo, "hi": hi}


def _encode_real(x, p: Mapping, d: FeatureDef, horizon: float) -> float:
    top = p["max"]
    if x is None:
        if d.null == "horizon":
            return horizon / top
        if d.null == "zero":
            return 0.0
        return 1.0
    return float(x) / top


def _disc_index(x: float | None, p: Mapping) -> int:
    mode = p["mode"]
    if mode == "int":
        if x is None:
            return 0
        return int(min(max(round(x), p["lo"]), p["hi"])) - p["lo"]
    if mode == "vocab":
        values = p["values"]
        if x is None:
            return 0
        return min(range(len(values)), key=lambda i: (abs(values[i] - x), i))
    lo, hi = p["lo"], p["hi"]
    if x is None or hi <= lo:
        return 0
    idx = int(math.floor((x - lo) / (hi - lo) * SLICES))
    return min(max(idx, 0), SLICES - 1)


def discretize(defs: Sequence[FeatureDef], raw: Sequence, config: FeatureConfig) -> np.ndarray:
    return config.encode(defs, raw)


# ---------------------------------------------------------------- assembly

PHI_DEFS: tuple[FeatureDef, ...] = NOTE_DEFS + VOICE_DEFS + PAIR_DEFS + (EMPTY_DEF,)


def raw_phi(n: Note, v: int | None, voices: ActiveVoiceSet, ctx: ScoreContext,
            crossing: bool | None = None) -> list | None:
    """Raw values in PHI_DEFS order, or ``None`` for the empty voice."""
    if v is None:
        return None
    return (note_features(n, ctx) + voice_features(v, voices, ctx)
            + pair_features(n, v, voices, ctx, crossing) + [0])


def encode_phi(raw: list | None, config: FeatureConfig) -> np.ndarray:
    length = config.length(PHI_DEFS)
    if raw is None:
        vec = np.zeros(length)
        vec[-1] = 1.0
        return vec
    return config.encode(PHI_DEFS, raw)


def assemble_phi(n: Note, v: int | None, voices: ActiveVoiceSet, ctx: ScoreContext,
                 config: FeatureConfig) -> np.ndarray:
    """Φ(n, v) = [note | voice | pair | empty]; the empty voice gives a unit vector."""
    return encode_phi(raw_phi(n, v, voices, ctx), config)


def chord_phi_rows(chord: Chord, voices: ActiveVoiceSet, ctx: ScoreContext) -> dict:
    """Raw Φ values for every (note, voice) of a chord, the empty voice included.

    Voice features are computed once per voice.
    """
    out = {}
    vfeat = {v: voice_features(v, voices, ctx) for v in voices.order}
    for n in chord.notes:
        nf = note_features(n, ctx)
        for v in voices.order:
            out[(n.id, v)] = nf + vfeat[v] + pair_features(n, v, voices, ctx) + [0]
        out[(n.id, None)] = None
    return out


def collect_values(rows: Iterable[list | None], defs: Sequence[FeatureDef] = PHI_DEFS,
                   into: dict | None = None) -> dict[str, list]:
    into = into if into is not None else {}
    for raw in rows:
        if raw is None:
            continue
        for d, x in zip(defs, raw):
            into.setdefault(d.name, []).append(x)
    return into
