"""Separate a bundled toy song with the envelope baseline and compare with gold.

Prints each extracted voice as a pitch line and the link metrics against the
annotation, one scenario per row.

    python3 demos/separate_toy_song.py [toy_hymn|toy_waltz]
"""

import sys

from vocsep.envelope import separate_envelope
from vocsep.eval import extract_pairs, scenario_counts, toy_corpus, Metrics

NAMES = ["C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B"]


def spell(ps: int) -> str:
    return f"{NAMES[ps % 12]}{ps // 12 - 1}"


def voices(graph, notes):
    """Walk from every note without an in-link along the most salient out-link."""
    heads = sorted((m for m in notes if not graph.lt(m)), key=lambda m: (notes[m].on, -notes[m].ps))
    for h in heads:
        line, cur = [h], h
        while graph.rt(cur):
            cur = graph.rt(cur)[0]
            line.append(cur)
        yield line


def main(name: str = "toy_hymn") -> None:
    song = next(s for s in toy_corpus() if s.name == name)
    notes = song.score.by_id
    graph = separate_envelope(song.score)
    print(f"{name}: {len(notes)} notes, {len(extract_pairs(graph))} predicted links, "
          f"{len(extract_pairs(song.gold))} gold links")
    for i, line in enumerate(voices(graph, notes), 1):
        print(f"  voice {i}: " + " ".join(spell(notes[m].ps) for m in line))
    for scenario, counts in scenario_counts(extract_pairs(graph), song.gold, song.score).items():
        m = Metrics.from_counts(counts)
        print(f"  {scenario:<14} J {m.jaccard:6.2f}  P {m.precision:6.2f}  R {m.recall:6.2f}  F {m.f:6.2f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
