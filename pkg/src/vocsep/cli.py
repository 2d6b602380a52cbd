"""Command-line entry point: separate, train, evaluate, stats, gradcheck.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .eval import Song, chord_spec, corpus_stats, crossval, envelope_spec, note_spec
from .core import DEFAULT_HORIZON
from .envelope import separate_envelope
from .graph import VoiceGraph
from .neural import CheckpointError, chord_gradcheck, load_checkpoint, note_gradcheck
from .score import ScoreError
from .score_io import load_score, rewrite_unisons, serialize_separation

log = logging.getLogger("vocsep")

OK, VERIFY_FAILED, USAGE, IO_ERROR = 0, 1, 2, 3
SCORE_SUFFIXES = (".json", ".xml", ".musicxml", ".mxl")
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    inputs: tuple[Path, ...]
    model: str
    checkpoint: Path | None
    output: Path | None
    seed: int
    overrides: dict


# ------------------------------------------------------------------ inputs

def _threads() -> int:
    raw = os.environ.get("VW_THREADS", "")
    try:
        return max(1, int(raw)) if raw else min(4, os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"VW_THREADS must be an integer, got {raw!r}") from None


def score_files(paths: Sequence[Path]) -> list[Path]:
    files = []
    for p in paths:
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if f.suffix.lower() in SCORE_SUFFIXES)
        elif p.is_file():
            files.append(p)
        else:
            raise InputError(f"{p}: no such file or directory")
    return files


def _load_song(path: Path, link_by: str, unisons: bool) -> Song:
    score, ann = load_score(path, link_by=link_by)
    if unisons:
        score, ann = rewrite_unisons(score, ann)
    return Song(path.stem, score, VoiceGraph.from_annotation(ann, score.by_id))


def load_corpus(paths: Sequence[Path], link_by: str = "color", unisons: bool = False,
                require: bool = True) -> list[Song]:
    """Parse every score in parallel; report and skip files that fail."""
    files = score_files(paths)

    def one(path: Path):
        try:
            return _load_song(path, link_by, unisons)
        except (OSError, ScoreError, ValueError) as exc:
            return exc

    with ThreadPoolExecutor(_threads()) as pool:
        results = list(pool.map(one, files))
    songs = []
    for path, got in zip(files, results):
        if isinstance(got, Exception):
            log.error("%s: %s", path, got)
        else:
            songs.append(got)
    names = [s.name for s in songs]
    if len(set(names)) != len(names):
        raise InputError("two scores share a file name stem")
    if require and not songs:
        raise InputError("no usable annotated scores")
    log.info("loaded %d of %d scores", len(songs), len(files))
    return songs


def _horizon(text: str) -> Fraction | None:
    if text.lower() == "none":
        return None
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid horizon {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("horizon must be non-negative")
    return value


def _write(data: bytes | str, path: Path | None) -> None:
    if isinstance(data, str):
        data = data.encode()
    if path is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        log.info("wrote %s", path)


# ------------------------------------------------------------ model configs

def note_config(args, base=None):
    from .model_note import NoteModelConfig
    return _apply(base or NoteModelConfig(), args,
                  ("tau", "alpha", "beta", "epochs", "minibatch", "l2", "horizon"))


def chord_config(args, base=None):
    from .model_chord import ChordModelConfig
    return _apply(base or ChordModelConfig(), args,
                  ("alpha", "beta", "epochs", "l2", "horizon", "negatives", "budget"))


def _apply(config, args, names):
    changes = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    if getattr(args, "horizon_none", False):
        changes["horizon"] = None
    if getattr(args, "no_chains", False):
        changes["chains"] = False
    try:
        return replace(config, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_model(kind: str, path: Path | None):
    if path is None:
        raise UsageError(f"--checkpoint is required for the {kind} model")
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    try:
        if kind == "note":
            from .model_note import NoteModel
            return NoteModel.from_bytes(data)
        from .model_chord import ChordModel
        return ChordModel.from_bytes(data)
    except CheckpointError as exc:
        raise InputError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- commands

def cmd_separate(args) -> int:
    try:
        score, _ = load_score(args.score, link_by=args.link_by)
    except OSError as exc:
        raise InputError(f"{args.score}: {exc.strerror or exc}") from None
    except ScoreError as exc:
        raise InputError(f"{args.score}: {exc}") from None
    if args.model == "envelope":
        graph = separate_envelope(score, chains=not args.no_chains,
                                  horizon=None if args.horizon_none else
                                  (DEFAULT_HORIZON if args.horizon is None else args.horizon))
        _write(serialize_separation(score, graph), args.out)
        return OK
    model = _load_model(args.model, args.checkpoint)
    if args.model == "note":
        model.config = note_config(args, model.config)
        sep = model.separate(score)
    else:
        model.config = chord_config(args, model.config)
        sep = model.separate(score, args.seed)
    _write(serialize_separation(score, sep.graph, sep.link_scores), args.out)
    return OK


def cmd_train(args) -> int:
    songs = load_corpus(args.corpus, args.link_by, args.rewrite_unisons)
    corpus = [(s.score, s.gold) for s in songs]

    def progress(epoch: int, loss: float) -> None:
        log.info("epoch %d loss %.6f", epoch, loss)

    if args.model == "note":
        from .model_note import train_note_model
        model = train_note_model(corpus, note_config(args), args.seed, progress)
    else:
        from .model_chord import train_chord_model
        model = train_chord_model(corpus, chord_config(args), args.seed, progress)
    _write(model.to_bytes(), args.out)
    trace = args.trace or args.out.with_suffix(".trace.csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, loss in enumerate(model.trace, 1):
        w.writerow([i, f"{float(loss):.10g}"])
    _write(buf.getvalue(), trace)
    return OK


def cmd_evaluate(args) -> int:
    songs = load_corpus(args.corpus, args.link_by, args.rewrite_unisons)
    if args.model == "envelope":
        spec = envelope_spec(chains=not args.no_chains)
    elif args.model == "note":
        spec = note_spec(note_config(args), args.seed)
    else:
        spec = chord_spec(chord_config(args), args.seed)
    try:
        report = crossval(songs, spec, args.folds, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(report.to_json(), args.out / "report.json")
    _write(report.to_csv(), args.out / "report.csv")
    for sc in ("All", "Exclude rests", "Chords Many", "Chords One"):
        m = report.pooled(sc)
        print(f"{sc:14s} J={m.jaccard:6.2f} P={m.precision:6.2f} R={m.recall:6.2f} F={m.f:6.2f}")
    holds = report.partition_holds()
    print(f"self-test Many+One=All: {'pass' if holds else 'FAIL'}")
    return OK if holds else VERIFY_FAILED


def cmd_stats(args) -> int:
    songs = load_corpus(args.corpus, args.link_by, args.rewrite_unisons, require=False)
    stats = corpus_stats(songs)
    if args.out is None:
        _write(stats.to_csv(), None)
    else:
        _write(stats.to_csv(), args.out / "stats.csv")
        _write(stats.to_json(), args.out / "stats.json")
    return OK


def cmd_gradcheck(args) -> int:
    if args.checkpoint is not None:
        try:
            load_checkpoint(args.checkpoint.read_bytes())
        except OSError as exc:
            raise InputError(f"{args.checkpoint}: {exc.strerror or exc}") from None
        except CheckpointError as exc:
            print(f"checkpoint {args.checkpoint}: FAIL {exc}")
            return VERIFY_FAILED
        print(f"checkpoint {args.checkpoint}: pass")
    archs = ("note", "chord") if args.arch == "both" else (args.arch,)
    failed = False
    for arch in archs:
        check = note_gradcheck if arch == "note" else chord_gradcheck
        worst = None
        for seed in range(args.seed, args.seed + args.seeds):
            r = check(seed)
            if worst is None or r.max_rel_error > worst[0].max_rel_error:
                worst = (r, seed)
        r, seed = worst
        ok = r.ok(args.tol)
        failed |= not ok
        print(f"{arch}: {'pass' if ok else 'FAIL'} max relative error {r.max_rel_error:.3e} "
              f"at {r.worst_param} (seed {seed}, {args.seeds} seeds)")
    return VERIFY_FAILED if failed else OK


# ------------------------------------------------------------------ parser

def _common(p: argparse.ArgumentParser, corpus: bool) -> None:
    p.add_argument("--link-by", choices=("color", "part"), default="color",
                   help="how MusicXML scores encode voice links")
    if corpus:
        p.add_argument("--rewrite-unisons", action="store_true",
                       help="merge unison doublings into many-to-many links")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)


def _hyper(p: argparse.ArgumentParser, chord: bool = True, note: bool = True) -> None:
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=int, help="max in-links per note")
    p.add_argument("--beta", type=int, help="max out-links per note")
    p.add_argument("--epochs", type=int)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--horizon", type=_horizon, help="beat horizon, or 'none'")
    p.add_argument("--negatives", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--no-chains", action="store_true", help="skip repeat-chain preprocessing")


_HYPER = ("tau", "alpha", "beta", "epochs", "minibatch", "l2", "horizon", "negatives", "budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vocsep", description="Voice separation for symbolic scores.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("separate", help="separate one score into voices")
    p.add_argument("score", type=Path)
    p.add_argument("--model", choices=("envelope", "note", "chord"), default="envelope")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("-o", "--out", type=Path)
    _common(p, corpus=False)
    _hyper(p)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("train", help="train a neural model on an annotated corpus")
    p.add_argument("corpus", type=Path, nargs="+")
    p.add_argument("--model", choices=("note", "chord"), required=True)
    p.add_argument("-o", "--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--trace", type=Path, help="loss trace CSV (default: next to the checkpoint)")
    _common(p, corpus=True)
    _hyper(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="k-fold cross-validation")
    p.add_argument("corpus", type=Path, nargs="+")
    p.add_argument("--model", choices=("envelope", "note", "chord"), default="envelope")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("-o", "--out", type=Path, default=Path("."), help="report directory")
    _common(p, corpus=True)
    _hyper(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="corpus statistics and link histograms")
    p.add_argument("corpus", type=Path, nargs="+")
    p.add_argument("-o", "--out", type=Path, help="directory for stats.csv and stats.json")
    _common(p, corpus=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--arch", choices=("note", "chord", "both"), default="both")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--checkpoint", type=Path, help="also verify this checkpoint loads intact")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "folds", 2) < 2:
        parser.error("--folds must be at least 2")
    if getattr(args, "seeds", 1) < 1:
        parser.error("--seeds must be at least 1")
    args.horizon_none = "horizon" in vars(args) and args.horizon is None and _given(argv, "--horizon")
    inputs = getattr(args, "corpus", None) or [getattr(args, "score", None)]
    run = RunConfig(args.command, tuple(p for p in inputs if p is not None), getattr(args, "model", ""),
                    getattr(args, "checkpoint", None), getattr(args, "out", None), args.seed,
                    {k: v for k, v in vars(args).items() if k in _HYPER and v is not None})
    log.debug("%s", run)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        log.error("%s", exc)
        return USAGE
    except InputError as exc:
        log.error("%s", exc)
        return IO_ERROR


def _given(argv: Sequence[str] | None, flag: str) -> bool:
    argv = sys.argv[1:] if argv is None else argv
    return any(a == flag or a.startswith(flag + "=") for a in argv)


if __name__ == "__main__":
    sys.exit(main())
