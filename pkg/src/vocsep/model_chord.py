"""Chord-level model: candidate joint assignments, a set-based scorer, hinge training."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .constraints import (ChainRules, Constraints, SyncChecker, assignment_violations,
                          divergence_ok)
from .core import DEFAULT_HORIZON, ActiveVoiceSet, Chord
from .features_chord import (ASSIGN_DEFS, CONV_ROW_DEFS, DIV_ROW_DEFS, JointAssignment,
                             assignment_features, collect, convergence_features,
                             divergence_features)
from .features_note import (NOTE_DEFS, PHI_DEFS, VOICE_DEFS, FeatureConfig, FeatureConfigError,
                            ScoreContext, chord_phi_rows, encode_phi, note_features)
from .graph import VoiceGraph
from .insertion import insert_voices
from .model_note import Separation, _config_from_json, _config_json, gold_assignment, replay
from .neural import (AdaDelta, ChordNet, CheckpointError, build_from_arch, dump_checkpoint,
                     load_checkpoint, restore_params)
from .score import Score

log = logging.getLogger(__name__)

_CROSS = [d.name for d in PHI_DEFS].index("p.crosses")
_VOICE = slice(len(NOTE_DEFS), len(NOTE_DEFS) + len(VOICE_DEFS))


class GoldConstraintWarning(UserWarning):
    """A gold chord assignment breaks the decoding constraints and is not trained on."""


@dataclass(frozen=True)
class ChordModelConfig:
    filters: tuple[int, int, int] = (50, 20, 20)
    hidden: int = 100
    l2: float = 1e-4
    epochs: int = 300
    negatives: int = 500
    alpha: int = 2
    beta: int = 2
    horizon: Fraction | None = DEFAULT_HORIZON
    gap_rule: bool = True
    sync_crossing: bool = True
    chains: bool = True
    budget: int = 5000
    pool: int = 2000
    resample: bool = True

    def __post_init__(self):
        if self.alpha < 1 or self.beta < 1:
            raise ValueError("alpha and beta must be at least 1")
        if min(self.filters) < 1 or self.hidden < 1 or self.negatives < 1 or self.budget < 1:
            raise ValueError("filter, hidden, negative and budget counts must be at least 1")
        if self.epochs < 0 or self.pool < 1:
            raise ValueError("epochs must be >= 0 and pool >= 1")

    def constraints(self) -> Constraints:
        return Constraints(self.alpha, self.beta, self.horizon, gap_rule=self.gap_rule,
                           sync_crossing=self.sync_crossing, chains=self.chains)


# ------------------------------------------------------------- candidates

class CandidateSpace:
    """Joint assignments of one chord that satisfy every constraint."""

    def __init__(self, chord: Chord, voices: ActiveVoiceSet, cons: Constraints,
                 chains: ChainRules | None = None):
        self.chord = chord
        self.voices = voices
        self.cons = cons
        self.notes = voices.notes
        self.pos = {v: i for i, v in enumerate(voices.order)}
        self.sync = SyncChecker(voices) if cons.sync_crossing else None
        graph = voices.graph
        self.forced: dict[int, int] = {}
        self.allowed: dict[int, list[int]] = {}
        for n in chord.notes:
            p = chains.forced(n.id) if chains is not None else None
            if p is not None and p in self.pos:
                self.forced[n.id] = p
                self.allowed[n.id] = [p]
                continue
            self.allowed[n.id] = [
                v for v in voices.order
                if (chains is None or chains.allows(v, n.id))
                and divergence_ok(self.notes[v], len(graph.rt(v)), [n], cons)]
        self.options: dict[int, list[tuple]] = {}
        for n in chord.notes:
            if n.id in self.forced:
                self.options[n.id] = [(self.forced[n.id],)]
                continue
            opts = [(None,)]
            for k in range(1, cons.alpha + 1):
                opts.extend(itertools.combinations(self.allowed[n.id], k))
            self.options[n.id] = opts

    def upper_bound(self) -> int:
        return int(np.prod([len(o) for o in self.options.values()], dtype=object))

    def consistent(self, partial: dict[int, tuple], nid: int, parents: tuple) -> bool:
        """Can ``nid -> parents`` join the partial assignment without breaking a rule?"""
        if parents == (None,):
            return True
        n = self.notes[nid]
        graph = self.voices.graph
        for v in parents:
            targets = [self.notes[o] for o, ps in partial.items() if v in ps] + [n]
            if not divergence_ok(self.notes[v], len(graph.rt(v)), targets, self.cons):
                return False
        if self.sync is not None:
            for o, ps in partial.items():
                if ps != (None,) and self.sync.conflict(n, parents, self.notes[o], ps):
                    return False
        return True

    def enumerate(self, limit: int) -> list[JointAssignment] | None:
        """All valid assignments, or ``None`` once more than ``limit`` exist."""
        ids = [n.id for n in self.chord.notes]
        out: list[JointAssignment] = []
        items: list[tuple[int, tuple]] = []
        partial: dict[int, tuple] = {}

        def rec(i: int) -> bool:
            if i == len(ids):
                out.append(JointAssignment(tuple(items)))
                return len(out) <= limit
            nid = ids[i]
            for opt in self.options[nid]:
                if not self.consistent(partial, nid, opt):
                    continue
                partial[nid] = opt
                items.append((nid, opt))
                ok = rec(i + 1)
                items.pop()
                del partial[nid]
                if not ok:
                    return False
            return True

        return out if rec(0) else None

    def sample(self, rng: np.random.Generator) -> JointAssignment:
        """Visit notes in random order; draw voices from the active set plus the
        empty voice until the empty voice comes up or the note is full."""
        partial: dict[int, tuple] = {}
        for nid, p in self.forced.items():
            partial[nid] = (p,)
        free = [n.id for n in self.chord.notes if n.id not in self.forced]
        for i in rng.permutation(len(free)):
            nid = free[i]
            cur: list[int] = []
            while len(cur) < self.cons.alpha:
                cands = [None] + [v for v in self.allowed[nid] if v not in cur
                                  and self.consistent(partial, nid, tuple(cur + [v]))]
                pick = cands[int(rng.integers(len(cands)))]
                if pick is None:
                    break
                cur.append(pick)
            partial[nid] = tuple(sorted(cur, key=self.pos.__getitem__)) if cur else (None,)
        return JointAssignment(tuple((n.id, partial[n.id]) for n in self.chord.notes))

    def sample_unique(self, k: int, rng: np.random.Generator, exclude=(),
                      max_tries: int | None = None) -> list[JointAssignment]:
        seen = set(exclude)
        out = []
        tries = max_tries if max_tries is not None else 10 * k
        for _ in range(tries):
            if len(out) >= k:
                break
            j = self.sample(rng)
            if j not in seen:
                seen.add(j)
                out.append(j)
        return out


def enumerate_or_sample(chord: Chord, voices: ActiveVoiceSet, cons: Constraints, budget: int,
                        rng: np.random.Generator, chains: ChainRules | None = None
                        ) -> tuple[list[JointAssignment], bool]:
    """Every valid assignment when there are at most ``budget``, else a sample of them.

    Returns the candidates and whether the list is exhaustive.
    """
    space = CandidateSpace(chord, voices, cons, chains)
    full = space.enumerate(budget)
    if full is not None:
        return full, True
    return space.sample_unique(budget, rng), False


# ---------------------------------------------------------------- features

class ChordInputs:
    """Feature rows of one chord state, shared by all candidate assignments."""

    def __init__(self, chord: Chord, voices: ActiveVoiceSet, ctx: ScoreContext):
        self.chord = chord
        self.voices = voices.copy()  # rows may be built after the live state moves on
        self.ctx = ctx
        raw = chord_phi_rows(chord, self.voices, ctx)
        self.pair_keys = list(raw)
        self.pair_index = {k: i for i, k in enumerate(self.pair_keys)}
        self.pair_raw = [raw[k] for k in self.pair_keys]
        self.crossing = {k: bool(r[_CROSS]) for k, r in raw.items() if r is not None}
        self.voice_raw = {}
        for (nid, v), r in raw.items():
            if r is not None and v not in self.voice_raw:
                self.voice_raw[v] = r[_VOICE]
        self.note_raw = {n.id: note_features(n, ctx) for n in chord.notes}
        self.conv_index: dict = {}
        self.conv_raw: list = []
        self.div_index: dict = {}
        self.div_raw: list = []

    def _conv(self, nid, vs, exists) -> int:
        key = (nid, vs, exists)
        i = self.conv_index.get(key)
        if i is None:
            n = self.voices.notes[nid]
            row = convergence_features(n, vs, self.voices, self.ctx, exists) + self.note_raw[nid]
            i = self.conv_index[key] = len(self.conv_raw)
            self.conv_raw.append(row)
        return i

    def _div(self, ns, v, exists) -> int:
        key = (ns, v, exists)
        i = self.div_index.get(key)
        if i is None:
            row = divergence_features(ns, v, self.voices, self.ctx, exists) + self.voice_raw[v]
            i = self.div_index[key] = len(self.div_raw)
            self.div_raw.append(row)
        return i

    def inputs(self, j: JointAssignment) -> tuple[list[int], list[int], list[int], list]:
        """Pair, convergence and divergence row indices plus raw assignment values."""
        vec = j.vectors()
        rev = j.rev()
        conv_exists = any(len(vs) > 1 for vs in vec.values())
        div_exists = any(len(ns) > 1 for ns in rev.values())
        pairs = [self.pair_index[(nid, v)] for nid, vs in j.items for v in vs]
        convs = [self._conv(nid, vs, conv_exists) for nid, vs in vec.items() if vs]
        divs = [self._div(ns, v, div_exists) for v, ns in sorted(rev.items())]
        return pairs, convs, divs, assignment_features(self.chord, j, self.voices, self.crossing)

    def collect(self, values: dict, assign_rows: Sequence[list]) -> dict:
        collect((r for r in self.pair_raw if r is not None), PHI_DEFS, values)
        collect(self.conv_raw, CONV_ROW_DEFS, values)
        collect(self.div_raw, DIV_ROW_DEFS, values)
        collect(assign_rows, ASSIGN_DEFS, values)
        return values


class EncodedChord:
    """Encoded rows of one chord state plus padded index arrays for candidates."""

    def __init__(self, inputs: ChordInputs, features: FeatureConfig):
        self.inputs = inputs
        self.features = features
        self.pair = np.vstack([encode_phi(r, features) for r in inputs.pair_raw])
        self._conv_rows: list[np.ndarray] = []
        self._div_rows: list[np.ndarray] = []
        self._assign_cache: dict[tuple, np.ndarray] = {}
        self.conv = np.zeros((0, features.length(CONV_ROW_DEFS)))
        self.div = np.zeros((0, features.length(DIV_ROW_DEFS)))

    def _sync_rows(self) -> None:
        inp = self.inputs
        if len(self._conv_rows) < len(inp.conv_raw):
            for r in inp.conv_raw[len(self._conv_rows):]:
                self._conv_rows.append(self.features.encode(CONV_ROW_DEFS, r))
            self.conv = np.vstack(self._conv_rows)
        if len(self._div_rows) < len(inp.div_raw):
            for r in inp.div_raw[len(self._div_rows):]:
                self._div_rows.append(self.features.encode(DIV_ROW_DEFS, r))
            self.div = np.vstack(self._div_rows)

    def assign_row(self, raw: list) -> np.ndarray:
        key = tuple(raw)
        row = self._assign_cache.get(key)
        if row is None:
            row = self._assign_cache[key] = self.features.encode(ASSIGN_DEFS, raw)
        return row

    def batch(self, cands: Sequence[JointAssignment]) -> "CandidateBatch":
        idx = [self.inputs.inputs(j) for j in cands]
        self._sync_rows()
        return CandidateBatch(
            _pad([p for p, _, _, _ in idx]), _pad([c for _, c, _, _ in idx]),
            _pad([d for _, _, d, _ in idx]),
            np.vstack([self.assign_row(a) for _, _, _, a in idx]) if idx
            else np.zeros((0, self.features.length(ASSIGN_DEFS))))


@dataclass
class CandidateBatch:
    pair_idx: np.ndarray
    conv_idx: np.ndarray
    div_idx: np.ndarray
    assign: np.ndarray

    def __len__(self):
        return len(self.assign)

    def take(self, rows) -> "CandidateBatch":
        return CandidateBatch(self.pair_idx[rows], self.conv_idx[rows], self.div_idx[rows],
                              self.assign[rows])


def _pad(lists: Sequence[Sequence[int]]) -> np.ndarray:
    width = max((len(x) for x in lists), default=0)
    out = np.full((len(lists), max(width, 1)), -1, dtype=np.int64)
    for r, ix in enumerate(lists):
        out[r, :len(ix)] = ix
    return out


def _rows(matrix: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return matrix[idx[idx >= 0]]


# ------------------------------------------------------------------ model

Scorer = Callable[[Chord, ActiveVoiceSet, ScoreContext, Sequence[JointAssignment]], np.ndarray]


class ChordModel:
    def __init__(self, features: FeatureConfig, config: ChordModelConfig = ChordModelConfig(),
                 net: ChordNet | None = None, rng: np.random.Generator | None = None):
        self.features = features
        self.config = config
        widths = (features.length(PHI_DEFS), features.length(CONV_ROW_DEFS),
                  features.length(DIV_ROW_DEFS), features.length(ASSIGN_DEFS))
        if net is None:
            net = ChordNet(*widths, filters=tuple(config.filters), hidden=config.hidden)
            net.init(rng if rng is not None else np.random.default_rng(0))
        have = (net.pair_width, net.conv_width, net.div_width, net.assign_width)
        if have != widths:
            raise FeatureConfigError(f"network input widths {have} do not match the feature config {widths}")
        self.net = net
        self.optimizer: AdaDelta | None = None
        self.trace: list[float] = []
        self.skipped = 0

    def score_batch(self, enc: EncodedChord, batch: CandidateBatch) -> np.ndarray:
        return self.net.score_many(enc.pair, enc.conv, enc.div, batch.pair_idx, batch.conv_idx,
                                   batch.div_idx, batch.assign)

    def scorer(self, chord: Chord, voices: ActiveVoiceSet, ctx: ScoreContext,
               cands: Sequence[JointAssignment]) -> np.ndarray:
        enc = EncodedChord(ChordInputs(chord, voices, ctx), self.features)
        out = []
        for start in range(0, len(cands), 1000):
            out.append(self.score_batch(enc, enc.batch(cands[start:start + 1000])))
        return np.concatenate(out) if out else np.zeros(0)

    def forward_one(self, enc: EncodedChord, batch: CandidateBatch, r: int):
        return self.net.forward(_rows(enc.pair, batch.pair_idx[r]), _rows(enc.conv, batch.conv_idx[r]),
                                _rows(enc.div, batch.div_idx[r]), batch.assign[r])

    def separate(self, score: Score, seed: int = 0) -> Separation:
        return assign_chord_level(score, self.scorer, self.config, seed)

    def to_bytes(self) -> bytes:
        extra = {"model": "chord", "config": _config_json(self.config), "loss_trace": self.trace,
                 "skipped_chords": self.skipped}
        return dump_checkpoint(self.net.arch(), self.net.params, self.optimizer,
                               self.features.to_json(), extra)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ChordModel":
        doc = load_checkpoint(data)
        if doc.get("arch", {}).get("kind") != "chord":
            raise CheckpointError("checkpoint does not hold a chord-level model")
        net = build_from_arch(doc["arch"])
        net.init(np.random.default_rng(0), zero=True)
        restore_params(net.params, doc["arrays"])
        extra = doc.get("extra", {})
        model = cls(FeatureConfig.from_json(doc["feature_config"]),
                    _config_from_json(extra.get("config", {}), ChordModelConfig), net)
        model.trace = list(extra.get("loss_trace", []))
        model.skipped = int(extra.get("skipped_chords", 0))
        return model


def pick_best(cands: Sequence[JointAssignment], scores: np.ndarray) -> int:
    """Highest score; ties prefer fewer new voices, then the lexicographically first."""
    return min(range(len(cands)), key=lambda i: (-scores[i], cands[i].new_voices(), cands[i].sort_key()))


def assign_chord_level(score: Score, scorer: Scorer, config: ChordModelConfig = ChordModelConfig(),
                       seed: int = 0, ctx: ScoreContext | None = None) -> Separation:
    """Greedy chord-by-chord decoding with the best-scoring valid joint assignment."""
    cons = config.constraints()
    ctx = ctx or ScoreContext(score, config.horizon)
    chains = ChainRules(ctx.chains) if config.chains else None
    rng = np.random.default_rng(seed)
    voices = ActiveVoiceSet(ctx.notes, VoiceGraph(), horizon=config.horizon)
    pairs = []
    link_scores = {}
    for chord in ctx.chords:
        voices.filter_horizon(chord)
        cands, _ = enumerate_or_sample(chord, voices, cons, config.budget, rng, chains)
        scores = np.asarray(scorer(chord, voices, ctx, cands), dtype=np.float64)
        best = cands[pick_best(cands, scores)]
        for nid, vs in best.items:
            for v in vs:
                pairs.append((nid, v))
                if v is not None:
                    link_scores[(v, nid)] = float(scores[cands.index(best)])
        insert_voices(best.as_dict(), voices)
    return Separation(pairs, voices.graph, link_scores)


# ---------------------------------------------------------------- training

@dataclass
class TrainingChord:
    enc: EncodedChord | None
    inputs: ChordInputs
    gold: JointAssignment
    pool: list[JointAssignment]
    batch: CandidateBatch | None = None  # row 0 is gold, the rest the pool
    assign_raw: list = field(default_factory=list)


def collect_training_chords(corpus: Sequence[tuple[Score, VoiceGraph]], config: ChordModelConfig,
                            rng: np.random.Generator) -> tuple[list[TrainingChord], int]:
    """Replay gold voices; keep each chord with its gold assignment and a negative pool."""
    cons = config.constraints()
    out, skipped = [], 0
    for score, gold in corpus:
        ctx = ScoreContext(score, config.horizon)
        chains = ChainRules(ctx.chains) if config.chains else None
        for chord, voices, mapping in replay(ctx, gold, cons):
            problems = assignment_violations(chord, mapping, voices, cons, chains)
            if problems:
                skipped += 1
                warnings.warn(f"{score.title or 'score'} chord at beat {chord.onset}: gold skipped "
                              f"({problems[0]})", GoldConstraintWarning, stacklevel=2)
                continue
            j = JointAssignment.from_mapping(chord, mapping, voices.order)
            space = CandidateSpace(chord, voices, cons, chains)
            full = space.enumerate(config.budget)
            if full is None:
                pool = space.sample_unique(config.pool, rng, exclude=(j,))
            else:
                pool = [c for c in full if c != j]
                if len(pool) > config.pool:
                    keep = np.sort(rng.choice(len(pool), config.pool, replace=False))
                    pool = [pool[i] for i in keep]
            if not pool:
                continue
            inputs = ChordInputs(chord, voices, ctx)
            raw = [inputs.inputs(c)[3] for c in [j] + pool]
            out.append(TrainingChord(None, inputs, j, pool, assign_raw=raw))
    return out, skipped


def train_chord_model(corpus: Sequence[tuple[Score, VoiceGraph]],
                      config: ChordModelConfig = ChordModelConfig(), seed: int = 0,
                      on_epoch: Callable[[int, float], None] | None = None) -> ChordModel:
    """Max-margin training: per chord, push the gold score 1 above the best sampled negative.

    ``trace`` holds the mean hinge loss of each epoch (epoch 1 first).
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    rng = np.random.default_rng(seed)
    chords, skipped = collect_training_chords(corpus, config, rng)
    values: dict = {}
    for tc in chords:
        tc.inputs.collect(values, tc.assign_raw)
    if not values:
        raise ValueError("training corpus yields no usable chords")
    horizon = float(config.horizon) if config.horizon is not None else float(DEFAULT_HORIZON)
    defs = PHI_DEFS + CONV_ROW_DEFS + DIV_ROW_DEFS + ASSIGN_DEFS
    features = FeatureConfig.fit(defs, values, horizon)
    model = ChordModel(features, config, rng=rng)
    model.skipped = skipped
    for tc in chords:
        tc.enc = EncodedChord(tc.inputs, features)
        tc.batch = tc.enc.batch([tc.gold] + tc.pool)
        tc.assign_raw = []
    opt = AdaDelta(l2=config.l2)
    model.optimizer = opt
    net = model.net
    frozen = {id(tc): _draw(tc, config.negatives, rng) for tc in chords} if not config.resample else None
    for epoch in range(config.epochs):
        total = 0.0
        for ci in rng.permutation(len(chords)):
            tc = chords[ci]
            rows = frozen[id(tc)] if frozen is not None else _draw(tc, config.negatives, rng)
            scores = model.score_batch(tc.enc, tc.batch.take(np.concatenate([[0], rows])))
            worst = int(np.argmax(scores[1:]))
            loss = max(0.0, 1.0 - scores[0] + scores[1 + worst])
            total += loss
            grads = net.params.zeros_like()
            if loss > 0:
                _, cache_pos = model.forward_one(tc.enc, tc.batch, 0)
                _, cache_neg = model.forward_one(tc.enc, tc.batch, int(rows[worst]))
                net.backward(cache_pos, -1.0, grads)
                net.backward(cache_neg, 1.0, grads)
            opt.step(net.params, grads)
        mean = total / max(len(chords), 1)
        model.trace.append(mean)
        if on_epoch:
            on_epoch(epoch + 1, mean)
        log.debug("chord epoch %d hinge %.6f", epoch + 1, mean)
    return model


def _draw(tc: TrainingChord, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(tc.pool)
    if n <= k:
        return np.arange(1, n + 1)
    return 1 + np.sort(rng.choice(n, k, replace=False))


def gold_joint(chord: Chord, gold: VoiceGraph, voices: ActiveVoiceSet, cons: Constraints,
               chains: ChainRules | None = None) -> JointAssignment:
    return JointAssignment.from_mapping(chord, gold_assignment(chord, gold, voices, cons, chains),
                                        voices.order)
