"""Rebuild the two bundled toy songs from a compact line notation.

Each voice line is a start beat and a list of ``pitch:beats`` tokens, with
``r`` for rests and ``@name`` to label a note for extra links. Consecutive
notes of a line are linked; ``links`` adds the splits and merges.

    python3 demos/build_toy_corpus.py
"""

from fractions import Fraction
from pathlib import Path

from vocsep.core import detect_pseudo_polyphonic_chains
from vocsep.score import AnnotationSet, Note, Score
from vocsep.score_io import serialize_score_json

OUT = Path(__file__).resolve().parents[1] / "src" / "vocsep" / "data" / "toy"
STEPS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}


def pitch(name: str) -> int:
    step, rest = name[0], name[1:]
    alter = rest.count("#") - rest.count("b")
    return 12 * (int(rest.strip("#b")) + 1) + STEPS[step] + alter


def build(title, num, key, lines, links=(), first=None, salience=None):
    notes, edges, named = [], set(), {}
    raw = []
    for start, tokens in lines:
        on = Fraction(start)
        prev = first.get(tokens[0]) if first else None
        line = []
        for tok in tokens.split():
            label = None
            if "@" in tok:
                tok, label = tok.split("@")
            name, beats = tok.split(":")
            dur = Fraction(beats)
            if name != "r":
                raw.append((on, pitch(name), dur, label))
                line.append(len(raw) - 1)
            on += dur
        edges.update(zip(line, line[1:]))
    order = sorted(range(len(raw)), key=lambda i: (raw[i][0], -raw[i][1]))
    ids = {i: k for k, i in enumerate(order)}
    for i in order:
        on, ps, dur, label = raw[i]
        notes.append(Note(ids[i], ps, on, on + dur, dur * Fraction(4, 4), int(on // num)))
        if label:
            named[label] = ids[i]
    pairs = {(ids[a], ids[b]) for a, b in edges}
    pairs |= {(named[a], named[b]) for a, b in links}
    sal = {named[k]: tuple(named[x] for x in v) for k, v in (salience or {}).items()}
    score = Score(tuple(notes), ((0, num, 4),), key, 1, title)
    ann = AnnotationSet(frozenset(pairs), sal)
    ann.validate(score)
    return score, ann


SONG_1 = dict(
    title="toy_hymn", num=4, key=0,
    lines=[
        (0, "E5:1 D5:1 C5:1 D5:1 E5:1 E5:1 E5:1 r:1 D5:1 D5:1 D5:1 E5:1 G5:2 G5:2 "
            "E5:1 D5:1 C5:1 D5:1 E5:1 E5:1 E5:1 E5:1 D5:1 D5:1 E5:1 D5:1 C5:4 "
            "E5:2 D5:2 C5:4 E5:1 D5:1 C5:1 D5:1 E5:1 E5:1 E5:2"),
        (0, "C3:2 G2:2 C3:2 C3:2 G2:2 G2:2 C3:2 E3:2 C3:2 G2:2 A2:2 C3:2 G2:2 G2:2 C3:4 "
            "C3:2 G2:2 C3:4 C3:2 G2:2 C3:2 C3:2"),
        (0, "G4:2 F4:2 G4:2 G4:2 F4:2 F4:2 E4:2 E4:2@split"),
        (16, "G4:2@hi G4:2 G4:2 G4:2 F4:2 F4:2@hiend"),
        (16, "C4:2@lo C4:2 C4:2 C4:2 B3:2 B3:2@loend"),
        (28, "E4:4@merge E4:0.5@e0 r:0.5 E4:0.5 r:0.5 E4:0.5 r:0.5 E4:0.5 r:0.5 "
             "E4:0.5 r:0.5 E4:0.5 r:0.5 E4:0.5 r:0.5 E4:0.5 r:0.5 G4:2 G4:2 F4:2 E4:2"),
        (32.5, "G4:0.5 r:0.5 G4:0.5 r:0.5 G4:0.5 r:0.5 G4:0.5 r:0.5 "
               "G4:0.5 r:0.5 G4:0.5 r:0.5 G4:0.5 r:0.5 G4:0.5"),
    ],
    links=[("split", "hi"), ("split", "lo"), ("hiend", "merge"), ("loend", "merge")],
    salience={"split": ("hi", "lo"), "merge": ("hiend", "loend")},
)

SONG_2 = dict(
    title="toy_waltz", num=3, key=1,
    lines=[
        (0, "D5:1 B4:1 G4:1 A4:1 B4:1 C5:1 D5:2 D5:1 E5:1 D5:1 C5:1 B4:1 A4:1 G4:1 "
            "A4:2 r:1 B4:1 C5:1 D5:1 E5:3 D5:1 B4:1 G4:1 A4:1 B4:1 A4:1@sa "
            "G4:3@uni B4:3@up D5:3 G4:3 D5:1 B4:1 G4:1 A4:1 B4:1 C5:1 D5:3"),
        (0, "D4:3 F#4:3 F#4:3 G4:3 D4:3 D4:3 G4:3 G4:3 D4:3 F#4:3@aa"),
        (33, "D4:3@down D4:0.5 r:0.5 D4:0.5 r:0.5 D4:0.5 r:0.5 D4:0.5 r:0.5 D4:0.5 r:0.5 "
             "D4:0.5 r:0.5 D4:3 E4:3"),
        (36.5, "B3:0.5 r:0.5 B3:0.5 r:0.5 B3:0.5 r:0.5 B3:0.5 r:0.5 B3:0.5 r:0.5 B3:0.5"),
        (0, "G2:3 D3:3 B2:3 C3:1 r:1 C3:1 G2:3 D3:3 E3:3 C3:3 D3:3 D2:3 G2:3 B2:3 "
            "E3:3 A2:3 C3:3 D3:3 G2:3"),
    ],
    links=[("sa", "uni"), ("aa", "uni"), ("uni", "up"), ("uni", "down")],
    salience={"uni": ("sa", "aa", "up", "down")},
)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    total = 0
    for spec in (SONG_1, SONG_2):
        score, ann = build(**spec)
        (OUT / f"{spec['title']}.json").write_bytes(serialize_score_json(score, ann))
        total += len(score.notes)
        chains = detect_pseudo_polyphonic_chains(score)
        print(f"{spec['title']}: {len(score.notes)} notes, {len(ann.links)} links, "
              f"repeat chains of length {[len(c) for c in chains]}")
    print(f"total {total} notes")


if __name__ == "__main__":
    main()
