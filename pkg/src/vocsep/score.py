"""Score, note and annotation containers.

Time is kept as :class:`fractions.Fraction` beats so that onset equality and
offset arithmetic are exact.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping


class ScoreError(ValueError):
    """Raised for structurally invalid scores or annotations."""


@dataclass(frozen=True, order=False)
class Note:
    """A pitched event.

    Attributes:
        id: Unique integer identifier within a score.
        ps: Pitch space number, C4 = 60.
        on: Onset in beats.
        off: Offset in beats.
        ql: Duration in quarter notes.
        measure: Zero-based measure index.
    """

    id: int
    ps: int
    on: Fraction
    off: Fraction
    ql: Fraction
    measure: int = 0

    def __post_init__(self):
        if self.off <= self.on:
            raise ScoreError(f"note {self.id}: offset must exceed onset")
        if self.on < 0:
            raise ScoreError(f"note {self.id}: negative onset")
        if not 0 <= self.ps <= 127:
            raise ScoreError(f"note {self.id}: pitch {self.ps} out of range")

    @property
    def bd(self) -> Fraction:
        """Duration in beats."""
        return self.off - self.on


@dataclass(frozen=True)
class Score:
    notes: tuple[Note, ...]
    time_signatures: tuple[tuple[int, int, int], ...] = ((0, 4, 4),)
    key: int = 0
    divisions: int = 1
    title: str = ""

    def __post_init__(self):
        if not self.time_signatures or self.time_signatures[0][0] != 0:
            raise ScoreError("first time signature must apply at measure 0")
        ids = [n.id for n in self.notes]
        if len(set(ids)) != len(ids):
            raise ScoreError("duplicate note ids")

    @property
    def by_id(self) -> dict[int, Note]:
        return {n.id: n for n in self.notes}

    def time_signature_at(self, measure: int) -> tuple[int, int]:
        num, den = self.time_signatures[0][1:]
        for m, n, d in self.time_signatures:
            if m <= measure:
                num, den = n, d
        return num, den

    def measure_start(self, measure: int) -> Fraction:
        """Beat position of a measure, assuming every measure is complete."""
        start = Fraction(0)
        for m in range(measure):
            num, _ = self.time_signature_at(m)
            start += num
        return start

    def replace(self, **changes) -> "Score":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class AnnotationSet:
    """Gold voice links plus salience order at convergence/divergence points.

    ``salience`` maps a note id to an ordered tuple of the ids it is linked
    with (predecessors and successors, most salient first).
    """

    links: frozenset[tuple[int, int]] = frozenset()
    salience: Mapping[int, tuple[int, ...]] = field(default_factory=dict)

    def validate(self, score: Score) -> None:
        notes = score.by_id
        for a, b in self.links:
            if a not in notes or b not in notes:
                raise ScoreError(f"link ({a}, {b}) references an unknown note")
            if notes[a].on >= notes[b].on:
                raise ScoreError(f"link ({a}, {b}) does not go forward in time")
        for key, ids in self.salience.items():
            if len(set(ids)) != len(ids):
                raise ScoreError(f"salience list of note {key} repeats ids")
            for other in ids:
                if (key, other) not in self.links and (other, key) not in self.links:
                    raise ScoreError(
                        f"salience list of note {key} names {other}, which is not linked"
                    )


def make_note(id: int, ps: int, on, dur, measure: int = 0, ql=None) -> Note:
    """Convenience constructor taking anything Fraction accepts."""
    on = Fraction(on)
    dur = Fraction(dur)
    return Note(id, ps, on, on + dur, Fraction(ql) if ql is not None else dur, measure)


def make_score(notes: Iterable[Note], **kwargs) -> Score:
    return Score(tuple(notes), **kwargs)
