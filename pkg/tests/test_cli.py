import csv
import io
import json
import math
from pathlib import Path

import pytest

from helpers import melody
from vocsep import cli
from vocsep.score import AnnotationSet, make_score
from vocsep.score_io import parse_score_json, serialize_score_json

TOY = Path(cli.__file__).parent / "data" / "toy"


def run(*argv):
    return cli.main(["-q", *map(str, argv)])


@pytest.fixture
def tune(tmp_path):
    path = tmp_path / "tune.json"
    path.write_bytes(serialize_score_json(make_score(melody([60, 62, 64, 65, 67])), AnnotationSet()))
    return path


@pytest.fixture(scope="module")
def note_ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "note.json"
    assert run("train", TOY, "--model", "note", "--epochs", "10", "-o", out) == cli.OK
    return out


def links_of(path):
    _, ann = parse_score_json(Path(path).read_text())
    return ann.links


# --------------------------------------------------------------- separate

def test_envelope_on_a_melody_gives_one_voice(tune, tmp_path):
    out = tmp_path / "sep.json"
    assert run("separate", tune, "-o", out) == cli.OK
    assert links_of(out) == {(0, 1), (1, 2), (2, 3), (3, 4)}


def test_separation_goes_to_stdout_without_out(tune, capsys):
    assert run("separate", tune) == cli.OK
    assert json.loads(capsys.readouterr().out)["notes"]


def test_missing_score_is_an_io_error(tmp_path):
    assert run("separate", tmp_path / "nope.json") == cli.IO_ERROR


def test_unparseable_score_is_an_io_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("separate", bad) == cli.IO_ERROR


def test_neural_model_needs_a_checkpoint(tune):
    assert run("separate", tune, "--model", "note") == cli.USAGE


def test_unreadable_checkpoint_is_an_io_error(tune, tmp_path):
    assert run("separate", tune, "--model", "chord", "--checkpoint", tmp_path / "none") == cli.IO_ERROR


def test_tau_one_makes_every_note_its_own_voice(tune, note_ckpt, tmp_path):
    out = tmp_path / "sep.json"
    assert run("separate", tune, "--model", "note", "--checkpoint", note_ckpt, "--tau", "1.0",
               "-o", out) == cli.OK
    assert links_of(out) == frozenset()


def test_neural_separation_carries_link_scores(tune, note_ckpt, tmp_path):
    out = tmp_path / "sep.json"
    assert run("separate", tune, "--model", "note", "--checkpoint", note_ckpt, "-o", out) == cli.OK
    doc = json.loads(out.read_text())
    assert "link_scores" in doc


def test_checkpoint_of_the_wrong_kind_is_rejected(tune, note_ckpt):
    assert run("separate", tune, "--model", "chord", "--checkpoint", note_ckpt) == cli.IO_ERROR


# ------------------------------------------------------------------ train

def test_training_trace_is_finite_and_decreasing(note_ckpt):
    rows = list(csv.DictReader(io.StringIO(note_ckpt.with_suffix(".trace.csv").read_text())))
    losses = [float(r["loss"]) for r in rows]
    assert [int(r["epoch"]) for r in rows] == list(range(1, 11))
    assert all(math.isfinite(x) for x in losses) and losses[-1] < losses[0]


def test_zero_epochs_writes_a_valid_checkpoint(tmp_path, tune):
    out = tmp_path / "zero.json"
    assert run("train", TOY, "--model", "note", "--epochs", "0", "-o", out) == cli.OK
    assert out.with_suffix(".trace.csv").read_text() == "epoch,loss\n"
    assert run("separate", tune, "--model", "note", "--checkpoint", out) == cli.OK


@pytest.mark.parametrize("flags", [["--alpha", "0"], ["--beta", "0"], ["--tau", "0"],
                                   ["--epochs", "-1"]])
def test_invalid_hyperparameters_are_usage_errors(tmp_path, flags):
    assert run("train", TOY, "--model", "note", "-o", tmp_path / "m.json", *flags) == cli.USAGE


def test_training_without_usable_scores_is_an_io_error(tmp_path):
    (tmp_path / "bad.json").write_text("[]")
    assert run("train", tmp_path, "--model", "note", "-o", tmp_path / "m.json") == cli.IO_ERROR


def test_unknown_flag_exits_with_usage(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("train", TOY, "--model", "note", "--bogus")
    assert info.value.code == cli.USAGE


# --------------------------------------------------------------- evaluate

def test_evaluate_writes_reports_and_the_self_test(tmp_path, capsys):
    assert run("evaluate", TOY, "--folds", "2", "-o", tmp_path) == cli.OK
    printed = capsys.readouterr().out
    assert "self-test Many+One=All: pass" in printed
    doc = json.loads((tmp_path / "report.json").read_text())
    assert set(doc["pooled"]) == {"All", "Exclude rests", "Chords Many", "Chords One"}
    assert (tmp_path / "report.csv").read_text().startswith("song,scenario,jaccard,precision,recall,f")


def test_more_folds_than_songs_is_a_usage_error(tmp_path):
    assert run("evaluate", TOY, "--folds", "3", "-o", tmp_path) == cli.USAGE


# ------------------------------------------------------------------ stats

def test_stats_to_stdout(capsys):
    assert run("stats", TOY) == cli.OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows[-1]["song"] == "ALL"
    assert int(rows[-1]["notes"]) == sum(int(r["notes"]) for r in rows[:-1])


def test_stats_files(tmp_path):
    assert run("stats", TOY, "-o", tmp_path) == cli.OK
    assert json.loads((tmp_path / "stats.json").read_text())["totals"]["pairs"] > 0


# -------------------------------------------------------------- gradcheck

def test_gradcheck_passes_for_other_seeds(capsys):
    assert run("gradcheck", "--seed", "123", "--seeds", "1") == cli.OK


def test_gradcheck_reports_a_corrupted_checkpoint(tmp_path, note_ckpt, capsys):
    doc = json.loads(note_ckpt.read_text())
    name = doc["param_order"][0]
    doc["params"][name]["data"] = doc["params"][name]["data"][:-1]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run("gradcheck", "--seeds", "1", "--checkpoint", bad) == cli.VERIFY_FAILED
    out = capsys.readouterr()
    assert name in out.out + out.err
