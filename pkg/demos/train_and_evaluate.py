"""Train both neural models on one toy song and decode the other.

A short run: a few dozen epochs are enough for the toy songs. The loss traces
and held-out F-measures are printed; pass a number to change the epoch count.

    python3 demos/train_and_evaluate.py [epochs]
"""

import sys

from vocsep.eval import compute_metrics, extract_pairs, toy_corpus
from vocsep.model_chord import ChordModelConfig, train_chord_model
from vocsep.model_note import NoteModelConfig, train_note_model


def main(epochs: int = 30) -> None:
    train, test = toy_corpus()
    corpus = [(train.score, train.gold)]
    note = train_note_model(corpus, NoteModelConfig(epochs=epochs), seed=0)
    chord = train_chord_model(corpus, ChordModelConfig(epochs=epochs, pool=200, negatives=50), seed=0)
    print(f"trained on {train.name}, testing on {test.name}")
    for label, model, sep in (("note", note, note.separate(test.score)),
                              ("chord", chord, chord.separate(test.score, seed=0))):
        m = compute_metrics(extract_pairs(sep.graph), extract_pairs(test.gold))
        print(f"  {label:<5} loss {model.trace[0]:.4f} -> {model.trace[-1]:.4f}   "
              f"held-out F {m.f:.2f} (P {m.precision:.2f}, R {m.recall:.2f})")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:]))
