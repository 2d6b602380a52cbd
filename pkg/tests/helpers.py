"""Random score generators and small builders shared by the tests."""

import random
from fractions import Fraction as F

from vocsep.score import make_note, make_score

ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool | None, detail: str) -> None:
    """``ok=None`` marks a criterion that could not run."""
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"criterion {number}: {status} - {detail}"
    ACCEPTANCE[number] = line
    print(line)


def random_score(rng: random.Random, chords: int, width: int = 8, lo: int = 40, hi: int = 90,
                 durations=(1, 2, 3, 4, 6, 8, 12, 16), steps=(1, 2, 3, 4, 6, 8), unit: int = 4):
    """Up to ``width`` simultaneous notes per onset, durations free to overlap the next onsets."""
    on, notes, nid = F(0), [], 0
    for _ in range(chords):
        for p in rng.sample(range(lo, hi), rng.randint(1, width)):
            notes.append(make_note(nid, p, on, F(rng.choice(durations), unit)))
            nid += 1
        on += F(rng.choice(steps), unit)
    return make_score(notes)


def small_score(rng: random.Random, chords: int, width: int = 4):
    return random_score(rng, chords, width, 55, 80, durations=(1, 2, 4, 8), steps=(1, 2, 4), unit=2)


def melody(pitches, dur=1, start=0):
    """A monophonic line of equal durations."""
    return [make_note(i, p, F(start) + i * F(dur), F(dur)) for i, p in enumerate(pitches)]
