"""Pair-based evaluation, cross-validation and corpus statistics."""

from __future__ import annotations

import csv
import io
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .core import build_chord_sequence
from .envelope import separate_envelope
from .graph import VoiceGraph
from .score import Score
from .score_io import parse_score_json

log = logging.getLogger(__name__)

Pair = tuple[int, int]
SCENARIOS = ("All", "Exclude rests", "Chords Many", "Chords One")
POOLED = "ALL"


@dataclass(frozen=True)
class Song:
    name: str
    score: Score
    gold: VoiceGraph


def toy_corpus() -> list[Song]:
    """The two hand-annotated songs shipped with the package."""
    from importlib.resources import files

    songs = []
    for item in sorted(files("vocsep").joinpath("data").joinpath("toy").iterdir(), key=lambda f: f.name):
        if item.name.endswith(".json"):
            score, ann = parse_score_json(item.read_bytes())
            songs.append(Song(item.name[:-5], score, VoiceGraph.from_annotation(ann, score.by_id)))
    return songs


# ---------------------------------------------------------------- metrics

def extract_pairs(graph: VoiceGraph) -> set[Pair]:
    """Every directed link of the graph, one pair per link."""
    return set(graph.links())


@dataclass(frozen=True)
class Counts:
    hit: int = 0
    pred: int = 0
    true: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.hit + other.hit, self.pred + other.pred, self.true + other.true)

    @property
    def union(self) -> int:
        return self.pred + self.true - self.hit


@dataclass(frozen=True)
class Metrics:
    """Percentages; a ratio with an empty denominator is 0."""

    jaccard: float
    precision: float
    recall: float
    f: float
    counts: Counts = Counts()

    @classmethod
    def from_counts(cls, c: Counts) -> "Metrics":
        p = 100.0 * c.hit / c.pred if c.pred else 0.0
        r = 100.0 * c.hit / c.true if c.true else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        j = 100.0 * c.hit / c.union if c.union else 0.0
        return cls(j, p, r, f, c)

    def as_dict(self) -> dict:
        return {"jaccard": self.jaccard, "precision": self.precision, "recall": self.recall,
                "f": self.f, "hit": self.counts.hit, "pred": self.counts.pred, "true": self.counts.true}


def count_pairs(pred: Iterable[Pair], true: Iterable[Pair]) -> Counts:
    pred, true = set(pred), set(true)
    return Counts(len(pred & true), len(pred), len(true))


def compute_metrics(pred: Iterable[Pair], true: Iterable[Pair]) -> Metrics:
    return Metrics.from_counts(count_pairs(pred, true))


def partition_chords_many_one(true: VoiceGraph, score: Score) -> tuple[set[int], set[int]]:
    """Split notes by whether their chord touches a merge or a split.

    A chord is "many" when one of its notes has two or more true in-links, or a
    true in-link from a note with two or more out-links. All its notes go with it.
    """
    many, one = set(), set()
    for chord in build_chord_sequence(score):
        touched = any(len(true.lt(n.id)) >= 2 or any(len(true.rt(p)) >= 2 for p in true.lt(n.id))
                      for n in chord.notes)
        (many if touched else one).update(n.id for n in chord.notes)
    return many, one


def exclude_rest_separated(pairs: Iterable[Pair], score: Score) -> set[Pair]:
    """Drop pairs whose second note starts after the first one ends."""
    notes = score.by_id
    return {(a, b) for a, b in pairs if notes[b].on <= notes[a].off}


def scenario_counts(pred: Iterable[Pair], true_graph: VoiceGraph, score: Score) -> dict[str, Counts]:
    """Counts for every scenario; scenario pairs are those ending on the scenario's notes."""
    pred, true = set(pred), extract_pairs(true_graph)
    many, one = partition_chords_many_one(true_graph, score)

    def to(pairs, notes):
        return {p for p in pairs if p[1] in notes}

    return {
        "All": count_pairs(pred, true),
        "Exclude rests": count_pairs(exclude_rest_separated(pred, score),
                                     exclude_rest_separated(true, score)),
        "Chords Many": count_pairs(to(pred, many), to(true, many)),
        "Chords One": count_pairs(to(pred, one), to(true, one)),
    }


@dataclass
class MetricsReport:
    """Per-song rows plus pooled totals for every scenario."""

    songs: dict[str, dict[str, Counts]] = field(default_factory=dict)
    folds: list[list[str]] = field(default_factory=list)

    def add(self, song: str, counts: Mapping[str, Counts]) -> None:
        self.songs[song] = dict(counts)

    def pooled(self, scenario: str) -> Metrics:
        total = Counts()
        for row in self.songs.values():
            total = total + row[scenario]
        return Metrics.from_counts(total)

    def rows(self) -> list[dict]:
        out = []
        for song in sorted(self.songs):
            for sc in SCENARIOS:
                out.append({"song": song, "scenario": sc, **_rounded(Metrics.from_counts(self.songs[song][sc]))})
        for sc in SCENARIOS:
            out.append({"song": POOLED, "scenario": sc, **_rounded(self.pooled(sc))})
        return out

    def partition_holds(self) -> bool:
        """Many and One links add up to all links, pooled."""
        total = lambda sc: sum((r[sc] for r in self.songs.values()), Counts())  # noqa: E731
        return total("Chords Many") + total("Chords One") == total("All")

    def to_json(self) -> str:
        doc = {"scenarios": list(SCENARIOS),
               "pooled": {sc: self.pooled(sc).as_dict() for sc in SCENARIOS},
               "songs": {s: {sc: Metrics.from_counts(c).as_dict() for sc, c in row.items()}
                         for s, row in sorted(self.songs.items())},
               "folds": self.folds,
               "partition_identity": self.partition_holds()}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["song", "scenario", "jaccard", "precision", "recall", "f"],
                           lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow(row)
        return buf.getvalue()


def _rounded(m: Metrics) -> dict:
    return {"jaccard": f"{m.jaccard:.2f}", "precision": f"{m.precision:.2f}",
            "recall": f"{m.recall:.2f}", "f": f"{m.f:.2f}"}


# -------------------------------------------------------- cross-validation

Separator = Callable[[Score], VoiceGraph]


@dataclass(frozen=True)
class ModelSpec:
    """How to obtain a separator from training songs."""

    name: str
    fit: Callable[[Sequence[Song]], Separator]


def envelope_spec(chains: bool = True) -> ModelSpec:
    return ModelSpec("envelope", lambda train: (lambda score: separate_envelope(score, chains)))


def note_spec(config=None, seed: int = 0) -> ModelSpec:
    from .model_note import NoteModelConfig, train_note_model

    def fit(train):
        model = train_note_model([(s.score, s.gold) for s in train], config or NoteModelConfig(), seed)
        return lambda score: model.separate(score).graph

    return ModelSpec("note", fit)


def chord_spec(config=None, seed: int = 0) -> ModelSpec:
    from .model_chord import ChordModelConfig, train_chord_model

    def fit(train):
        model = train_chord_model([(s.score, s.gold) for s in train], config or ChordModelConfig(), seed)
        return lambda score: model.separate(score, seed).graph

    return ModelSpec("chord", fit)


def make_folds(names: Sequence[str], k: int, seed: int) -> list[list[str]]:
    """Seeded shuffle, then deal the songs round-robin into ``k`` folds."""
    if len(names) < k:
        raise ValueError(f"need at least {k} songs for {k} folds, got {len(names)}")
    order = sorted(names)
    random.Random(seed).shuffle(order)
    return [sorted(order[i::k]) for i in range(k)]


def evaluate(songs: Sequence[Song], separator: Separator, report: MetricsReport | None = None) -> MetricsReport:
    report = report or MetricsReport()
    for s in songs:
        pred = extract_pairs(separator(s.score))
        report.add(s.name, scenario_counts(pred, s.gold, s.score))
    return report


def crossval(corpus: Sequence[Song], spec: ModelSpec, k: int = 10, seed: int = 0) -> MetricsReport:
    """Train on k-1 folds, test on the held-out fold, pool every test song.

    Feature configurations are fitted inside ``spec.fit`` on the training songs only.
    """
    by_name = {s.name: s for s in corpus}
    if len(by_name) != len(corpus):
        raise ValueError("song names must be unique")
    folds = make_folds(list(by_name), k, seed)
    report = MetricsReport(folds=folds)
    for i, fold in enumerate(folds):
        train = [by_name[n] for f in folds if f is not fold for n in f]
        log.info("%s fold %d/%d: %d training songs, %d test songs", spec.name, i + 1, k, len(train), len(fold))
        separator = spec.fit(train)
        evaluate([by_name[n] for n in fold], separator, report)
    return report


# --------------------------------------------------------------- statistics

def canonical_voice_count(graph: VoiceGraph, notes: Iterable[int]) -> int:
    """Maximal paths along mutually most-salient links."""
    starts = 0
    for m in notes:
        preds = graph.lt(m)
        if not preds or graph.rt(preds[0])[0] != m:
            starts += 1
    return starts


def _beats(x: Fraction) -> str:
    return str(x)


@dataclass
class CorpusStats:
    rows: list[dict] = field(default_factory=list)
    gap_histogram: Counter = field(default_factory=Counter)
    convergence_histogram: Counter = field(default_factory=Counter)
    divergence_histogram: Counter = field(default_factory=Counter)
    divergence_pitch_gap: Counter = field(default_factory=Counter)

    def totals(self) -> dict:
        keys = ("notes", "onsets", "voices", "pairs", "one_to_one", "many_to_many")
        return {k: sum(r[k] for r in self.rows) for k in keys}

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["song", "notes", "onsets", "voices", "pairs", "one_to_one", "many_to_many"]
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow(r)
        if self.rows:
            w.writerow({"song": POOLED, **self.totals()})
        return buf.getvalue()

    def to_json(self) -> str:
        def hist(c: Counter) -> list:
            return [[k if not isinstance(k, tuple) else list(k), v] for k, v in sorted(c.items(), key=lambda kv: _sort_key(kv[0]))]
        doc = {"songs": self.rows, "totals": self.totals() if self.rows else {},
               "onset_offset_gap": hist(self.gap_histogram),
               "convergence": hist(self.convergence_histogram),
               "divergence": hist(self.divergence_histogram),
               "divergence_pitch_gap": hist(self.divergence_pitch_gap)}
        return json.dumps(doc, indent=1) + "\n"


def _sort_key(k):
    if isinstance(k, tuple):
        return tuple(_sort_key(x) for x in k)
    if isinstance(k, str):
        return Fraction(k)
    return k


def corpus_stats(corpus: Sequence[Song]) -> CorpusStats:
    """Per-song counts and link histograms.

    A link is many-to-many when its source has two or more out-links or its
    target two or more in-links.
    """
    stats = CorpusStats()
    for s in corpus:
        notes = s.score.by_id
        g = s.gold
        links = extract_pairs(g)
        many = {(a, b) for a, b in links if len(g.rt(a)) >= 2 or len(g.lt(b)) >= 2}
        stats.rows.append({
            "song": s.name, "notes": len(notes), "onsets": len({n.on for n in notes.values()}),
            "voices": canonical_voice_count(g, sorted(notes)), "pairs": len(links),
            "one_to_one": len(links) - len(many), "many_to_many": len(many)})
        for a, b in links:
            stats.gap_histogram[_beats(notes[b].on - notes[a].off)] += 1
        for m in notes:
            if len(g.lt(m)):
                stats.convergence_histogram[len(g.lt(m))] += 1
            if len(g.rt(m)):
                stats.divergence_histogram[len(g.rt(m))] += 1
            if len(g.rt(m)) >= 2:
                for t in g.rt(m):
                    gap = max(notes[t].on - notes[m].off, Fraction(0))
                    stats.divergence_pitch_gap[(abs(notes[t].ps - notes[m].ps), _beats(gap))] += 1
    return stats
