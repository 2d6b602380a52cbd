"""Note-level model: a probability per (note, voice) pair and a greedy decoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .constraints import ChainRules, Constraints, divergence_ok
from .core import DEFAULT_HORIZON, ActiveVoiceSet, Chord
from .features_note import (PHI_DEFS, FeatureConfig, FeatureConfigError, ScoreContext,
                            chord_phi_rows, collect_values, encode_phi)
from .graph import VoiceGraph
from .insertion import insert_voices
from .neural import (AdaDelta, CheckpointError, DenseNet, build_from_arch, dump_checkpoint,
                     load_checkpoint, restore_params)
from .score import Score

log = logging.getLogger(__name__)

Pair = tuple[int, int | None]
Assignment = dict[int, list[int | None]]


@dataclass(frozen=True)
class NoteModelConfig:
    tau: float = 0.3
    alpha: int = 2
    beta: int = 2
    hidden: tuple[int, ...] = (200, 200)
    l2: float = 1e-4
    epochs: int = 300
    minibatch: int = 20
    horizon: Fraction | None = DEFAULT_HORIZON
    chains: bool = True
    gap_rule: bool = True

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.alpha < 1 or self.beta < 1:
            raise ValueError("alpha and beta must be at least 1")
        if self.epochs < 0 or self.minibatch < 1:
            raise ValueError("epochs must be >= 0 and minibatch >= 1")

    def constraints(self) -> Constraints:
        return Constraints(self.alpha, self.beta, self.horizon, gap_rule=self.gap_rule,
                           sync_crossing=False, chains=self.chains)


@dataclass
class Separation:
    """Decoder output: every (note, voice) choice, the link graph and link scores."""

    pairs: list[Pair]
    graph: VoiceGraph
    link_scores: dict[tuple[int, int], float] = field(default_factory=dict)


# ------------------------------------------------------------ teacher forcing

def gold_assignment(chord: Chord, gold: VoiceGraph, voices: ActiveVoiceSet, cons: Constraints,
                    chains: ChainRules | None = None) -> Assignment:
    """Gold parents of each chord note, restricted to the active set and the caps.

    In-links keep their salience order and are cut to ``alpha``; a voice that
    would exceed ``beta`` out-links keeps its most salient gold targets.
    """
    active = set(voices.order)
    out: Assignment = {}
    for n in chord.notes:
        forced = chains.forced(n.id) if chains is not None else None
        if forced is not None and forced in active:
            out[n.id] = [forced]
            continue
        out[n.id] = [p for p in gold.lt(n.id) if p in active][:cons.alpha]
    by_voice: dict[int, list[int]] = {}
    for nid, ps in out.items():
        for p in ps:
            by_voice.setdefault(p, []).append(nid)
    for v, targets in by_voice.items():
        room = cons.beta - len(voices.graph.rt(v))
        if len(targets) > room:
            rank = {t: i for i, t in enumerate(gold.rt(v))}
            keep = set(sorted(targets, key=lambda t: rank.get(t, len(rank)))[:max(room, 0)])
            for t in targets:
                if t not in keep:
                    out[t].remove(v)
    order = {v: i for i, v in enumerate(voices.order)}
    return {nid: (sorted(ps, key=order.__getitem__) if ps else [None]) for nid, ps in out.items()}


def replay(ctx: ScoreContext, gold: VoiceGraph, cons: Constraints,
           ) -> Iterator[tuple[Chord, ActiveVoiceSet, Assignment]]:
    """Walk the score applying gold assignments; yields the state before each chord.

    The yielded active set is mutated after the consumer resumes the iterator.
    """
    chains = ChainRules(ctx.chains) if cons.chains else None
    voices = ActiveVoiceSet(ctx.notes, VoiceGraph(), horizon=cons.horizon)
    for chord in ctx.chords:
        voices.filter_horizon(chord)
        assignment = gold_assignment(chord, gold, voices, cons, chains)
        yield chord, voices, assignment
        insert_voices(assignment, voices)


def pair_labels(chord: Chord, voices: ActiveVoiceSet, assignment: Assignment) -> dict[Pair, int]:
    labels = {}
    for n in chord.notes:
        chosen = set(assignment[n.id])
        for v in voices.order:
            labels[(n.id, v)] = int(v in chosen)
        labels[(n.id, None)] = int(chosen == {None})
    return labels


# ------------------------------------------------------------------ decoding

ProbFn = Callable[[Chord, ActiveVoiceSet, ScoreContext], Mapping[Pair, float]]


def decode_chord(chord: Chord, voices: ActiveVoiceSet, probs: Mapping[Pair, float],
                 tau: float, cons: Constraints, chains: ChainRules | None = None) -> Assignment:
    """Greedy threshold assignment of one chord's notes to active voices."""
    notes = voices.notes
    graph = voices.graph
    vpos = {v: i for i, v in enumerate(voices.order)}
    vpos[None] = len(voices.order)
    assignment: Assignment = {n.id: [] for n in chord.notes}
    targets: dict[int, list] = {}
    closed: set[int] = set()
    for n in chord.notes:
        forced = chains.forced(n.id) if chains is not None else None
        if forced is not None and forced in vpos:
            assignment[n.id] = [forced]
            targets.setdefault(forced, []).append(n)
            closed.add(n.id)

    cp = {n.id: i for i, n in enumerate(chord.notes)}
    ranked = sorted(probs.items(), key=lambda kv: (-kv[1], cp[kv[0][0]], vpos[kv[0][1]]))
    full: set[int] = set()
    for (nid, v), p in ranked:
        if nid in closed or v in full:
            continue
        if v is None or p < tau:
            if not assignment[nid]:
                assignment[nid] = [None]
            closed.add(nid)
            continue
        if v in assignment[nid]:
            continue
        if chains is not None and not chains.allows(v, nid):
            continue
        new = targets.get(v, []) + [notes[nid]]
        if not divergence_ok(notes[v], len(graph.rt(v)), new, cons):
            continue
        assignment[nid].append(v)
        targets[v] = new
        if len(assignment[nid]) >= cons.alpha:
            closed.add(nid)
        if len(graph.rt(v)) + len(new) >= cons.beta:
            full.add(v)
    for nid, vs in assignment.items():
        if not vs:
            assignment[nid] = [None]
        else:
            vs.sort(key=vpos.__getitem__)
    return assignment


def assign_note_level(score: Score, prob_fn: ProbFn, config: NoteModelConfig = NoteModelConfig(),
                      ctx: ScoreContext | None = None) -> Separation:
    """Decode a score chord by chord, inserting the new voices after each chord."""
    cons = config.constraints()
    ctx = ctx or ScoreContext(score, config.horizon)
    chains = ChainRules(ctx.chains) if config.chains else None
    voices = ActiveVoiceSet(ctx.notes, VoiceGraph(), horizon=config.horizon)
    pairs: list[Pair] = []
    scores: dict[tuple[int, int], float] = {}
    for chord in ctx.chords:
        voices.filter_horizon(chord)
        probs = prob_fn(chord, voices, ctx)
        assignment = decode_chord(chord, voices, probs, config.tau, cons, chains)
        for nid, vs in assignment.items():
            for v in vs:
                pairs.append((nid, v))
                if v is not None:
                    scores[(v, nid)] = float(probs.get((nid, v), 1.0))
        insert_voices(assignment, voices)
    return Separation(pairs, voices.graph, scores)


# ------------------------------------------------------------------ the model

class NoteModel:
    """Feed-forward pair scorer bound to a fitted feature configuration."""

    def __init__(self, features: FeatureConfig, config: NoteModelConfig = NoteModelConfig(),
                 net: DenseNet | None = None, rng: np.random.Generator | None = None):
        self.features = features
        self.config = config
        width = features.length(PHI_DEFS)
        if net is None:
            net = DenseNet((width, *config.hidden, 1), "sigmoid", "note")
            net.init(rng if rng is not None else np.random.default_rng(0))
        if net.sizes[0] != width:
            raise FeatureConfigError(
                f"network expects {net.sizes[0]} inputs but the feature config yields {width}")
        self.net = net
        self.optimizer: AdaDelta | None = None
        self.trace: list[float] = []

    def encode(self, rows: Sequence) -> np.ndarray:
        return np.vstack([encode_phi(r, self.features) for r in rows])

    def chord_probs(self, chord: Chord, voices: ActiveVoiceSet, ctx: ScoreContext) -> dict[Pair, float]:
        raw = chord_phi_rows(chord, voices, ctx)
        keys = list(raw)
        out, _ = self.net.forward(self.encode([raw[k] for k in keys]))
        return dict(zip(keys, out.tolist()))

    def separate(self, score: Score, tau: float | None = None, alpha: int | None = None,
                 beta: int | None = None) -> Separation:
        cfg = self.config
        changes = {k: v for k, v in (("tau", tau), ("alpha", alpha), ("beta", beta)) if v is not None}
        if changes:
            cfg = NoteModelConfig(**{**_config_fields(cfg), **changes})
        return assign_note_level(score, self.chord_probs, cfg)

    def to_bytes(self) -> bytes:
        extra = {"model": "note", "config": _config_json(self.config), "loss_trace": self.trace}
        arch = {"kind": "note", "sizes": list(self.net.sizes), "head": self.net.head}
        return dump_checkpoint(arch, self.net.params, self.optimizer, self.features.to_json(), extra)

    @classmethod
    def from_bytes(cls, data: bytes) -> "NoteModel":
        doc = load_checkpoint(data)
        if doc.get("arch", {}).get("kind") != "note":
            raise CheckpointError("checkpoint does not hold a note-level model")
        net = build_from_arch(doc["arch"])
        net.init(np.random.default_rng(0), zero=True)
        restore_params(net.params, doc["arrays"])
        extra = doc.get("extra", {})
        model = cls(FeatureConfig.from_json(doc["feature_config"]),
                    _config_from_json(extra.get("config", {})), net)
        model.trace = list(extra.get("loss_trace", []))
        return model


def _config_fields(cfg) -> dict:
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


def _config_json(cfg) -> dict:
    out = {}
    for k, v in _config_fields(cfg).items():
        if isinstance(v, Fraction):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _config_from_json(doc: dict, cls=NoteModelConfig):
    kw = {}
    for k, v in doc.items():
        if k not in cls.__dataclass_fields__:
            continue
        if k == "horizon":
            v = Fraction(v) if v is not None else None
        elif isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    return cls(**kw)


# ------------------------------------------------------------------ training

@dataclass
class TrainingSet:
    rows: list
    labels: np.ndarray


def collect_training_pairs(corpus: Sequence[tuple[Score, VoiceGraph]],
                           config: NoteModelConfig) -> TrainingSet:
    """Every (note, voice) pair seen while replaying the gold voices, with labels."""
    cons = config.constraints()
    rows, labels = [], []
    for score, gold in corpus:
        ctx = ScoreContext(score, config.horizon)
        for chord, voices, assignment in replay(ctx, gold, cons):
            raw = chord_phi_rows(chord, voices, ctx)
            lab = pair_labels(chord, voices, assignment)
            for key, r in raw.items():
                rows.append(r)
                labels.append(lab[key])
    return TrainingSet(rows, np.asarray(labels, dtype=np.float64))


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def train_note_model(corpus: Sequence[tuple[Score, VoiceGraph]],
                     config: NoteModelConfig = NoteModelConfig(), seed: int = 0,
                     on_epoch: Callable[[int, float], None] | None = None) -> NoteModel:
    """Fit the pair scorer by minibatch cross-entropy with L2 and AdaDelta.

    The feature configuration is fitted on the training corpus only. The
    returned model carries the mean loss of each epoch in ``trace``.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    data = collect_training_pairs(corpus, config)
    if not data.rows:
        raise ValueError("training corpus has no notes")
    horizon = float(config.horizon) if config.horizon is not None else float(DEFAULT_HORIZON)
    features = FeatureConfig.fit(PHI_DEFS, collect_values(data.rows), horizon)
    rng = np.random.default_rng(seed)
    model = NoteModel(features, config, rng=rng)
    x = model.encode(data.rows)
    y = data.labels
    net = model.net
    opt = AdaDelta(l2=config.l2)
    model.optimizer = opt

    model.trace = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), config.minibatch):
            idx = perm[start:start + config.minibatch]
            out, acts = net.forward(x[idx])
            total += bce_loss(out, y[idx]) * len(idx)
            grads, _ = net.backward(acts, (out - y[idx]) / len(idx), logit=True)
            opt.step(net.params, grads)
        mean = total / len(y)
        model.trace.append(mean)
        if on_epoch:
            on_epoch(epoch + 1, mean)
        log.debug("note epoch %d loss %.6f", epoch + 1, mean)
    return model
