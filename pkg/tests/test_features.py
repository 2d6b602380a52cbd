import random
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_score
from vocsep.constraints import Constraints
from vocsep.core import ActiveVoiceSet
from vocsep.features_chord import (ASSIGN_DEFS, CONV_ROW_DEFS, DIV_ROW_DEFS, JointAssignment,
                                   assignment_rows, convergence_features, zip_unq)
from vocsep.features_note import (PHI_DEFS, FeatureConfig, FeatureConfigError, FeatureDef,
                                  ScoreContext, beat_strength, chord_phi_rows, chord_step,
                                  collect_values, encode_phi, scale_degree)
from vocsep.graph import VoiceGraph
from vocsep.model_note import replay
from vocsep.score import make_note, make_score

PITCH = FeatureDef("x.pitch", "disc", pitch=True)
SMALL = FeatureDef("x.small", "disc")
DIR = FeatureDef("x.dir", "dir")
REAL = FeatureDef("x.real", "real", "max")
GAP = FeatureDef("x.gap", "real", "horizon")


def toy_rows(toy):
    rows = []
    for s in toy:
        ctx = ScoreContext(s.score)
        for chord, voices, _ in replay(ctx, s.gold, Constraints(2, 2, F(4))):
            rows.extend(chord_phi_rows(chord, voices, ctx).values())
    return rows


# ------------------------------------------------------------- primitives

def test_beat_strength_levels():
    assert beat_strength(F(0), 4) == 1.0
    assert beat_strength(F(2), 4) == 0.5
    assert beat_strength(F(1), 4) == 0.25
    assert beat_strength(F(3, 2), 4) == 0.125
    assert beat_strength(F(1, 4), 4) == 0.0625
    assert beat_strength(F(1), 3) == 0.25


def test_scale_degrees_follow_the_key():
    assert [scale_degree(p, 0) for p in (60, 62, 64, 65, 67, 69, 71, 61)] == [1, 2, 3, 4, 5, 6, 7, 0]
    assert scale_degree(67, 1) == 1 and scale_degree(66, 1) == 7


def test_chord_step_counts_diatonic_interval():
    assert [chord_step(p, 60) for p in (60, 64, 67, 72, 62)] == [1, 3, 5, 1, 2]


# --------------------------------------------------------------- encoding

def test_pitch_range_splits_into_ten_slices():
    config = FeatureConfig.fit([PITCH], {"x.pitch": list(range(31, 80))})
    assert dict(config.params["x.pitch"]) == {"kind": "disc", "mode": "slices", "lo": 30.0, "hi": 80.0}
    vec = config.encode([PITCH], [60])
    assert vec.shape == (10,) and vec.argmax() == 6 and vec.sum() == 1
    assert config.encode([PITCH], [200]).argmax() == 9
    assert config.encode([PITCH], [0]).argmax() == 0


def test_small_integer_range_is_one_hot():
    config = FeatureConfig.fit([SMALL], {"x.small": [1, 2, 3, 4]})
    assert config.width(SMALL) == 4
    assert config.encode([SMALL], [3]).tolist() == [0, 0, 1, 0]
    assert config.encode([SMALL], [99]).tolist() == [0, 0, 0, 1]


def test_direction_is_three_way():
    config = FeatureConfig.fit([DIR], {})
    assert config.encode([DIR], [1]).tolist() == [1, 0, 0]
    assert config.encode([DIR], [0]).tolist() == [0, 1, 0]
    assert config.encode([DIR], [-1]).tolist() == [0, 0, 1]
    assert config.encode([DIR], [None]).tolist() == [0, 1, 0]


def test_real_values_scale_by_training_maximum():
    config = FeatureConfig.fit([REAL, GAP], {"x.real": [2.0, -8.0], "x.gap": [2.0]}, horizon=4.0)
    assert config.encode([REAL, GAP], [4.0, 1.0]).tolist() == [0.5, 0.5]
    # a missing distance saturates, a missing gap means "beyond the horizon"
    assert config.encode([REAL, GAP], [None, None]).tolist() == [1.0, 2.0]


def test_unknown_feature_raises():
    config = FeatureConfig.fit([REAL], {})
    with pytest.raises(FeatureConfigError):
        config.encode([SMALL], [1])


def test_config_json_round_trip_keeps_hash(toy):
    config = FeatureConfig.fit(PHI_DEFS, collect_values(toy_rows(toy)))
    again = FeatureConfig.from_json(config.to_json())
    assert again.hash() == config.hash() and again.dumps() == config.dumps()


def test_empty_voice_is_a_unit_vector(toy):
    config = FeatureConfig.fit(PHI_DEFS, collect_values(toy_rows(toy)))
    vec = encode_phi(None, config)
    assert vec.shape == (config.length(PHI_DEFS),)
    assert vec[-1] == 1 and vec.sum() == 1


def test_every_row_encodes_to_the_fixed_width(toy):
    rows = toy_rows(toy)
    config = FeatureConfig.fit(PHI_DEFS, collect_values(rows))
    layout = config.layout(PHI_DEFS)
    width = config.length(PHI_DEFS)
    for raw in rows:
        vec = encode_phi(raw, config)
        assert vec.shape == (width,) and np.all(np.isfinite(vec))
        assert vec[-1] == (1.0 if raw is None else 0.0)
        if raw is None:
            continue
        for d in PHI_DEFS:
            if d.kind in ("disc", "dir"):
                assert vec[layout[d.name]].sum() == 1.0, d.name


# ------------------------------------------------------------ chord features

@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_zip_unq_is_symmetric(seed):
    score = random_score(random.Random(seed), 10, width=4)
    ctx = ScoreContext(score)
    voices = ActiveVoiceSet(ctx.notes, VoiceGraph(), None)
    ids = [m.id for m in score.notes]
    rng = random.Random(seed)
    a, b = rng.choice(ids), rng.choice(ids)
    u, w = voices.voice(a), voices.voice(b)
    zu, pu, qu = zip_unq(u, w, ctx)
    zw, pw, qw = zip_unq(w, u, ctx)
    assert (zu, pu, qu) == (zw, pw, qw)


def test_singleton_convergence_compares_with_itself():
    notes = {0: make_note(0, 64, 0, 1), 1: make_note(1, 67, 1, 1)}
    ctx = ScoreContext(make_score(list(notes.values())))
    voices = ActiveVoiceSet(ctx.notes, VoiceGraph(), F(4), order=[0])
    raw = convergence_features(notes[1], [0], voices, ctx, False)
    assert raw[0] == 3 and raw[7] == 0 and raw[8] == 0  # mean, ends, head distances
    assert raw[10] is None  # no split between a voice and itself


def test_assignment_rows_have_the_declared_widths():
    notes = [make_note(0, 60, 0, 1), make_note(1, 67, 0, 1),
             make_note(2, 64, 1, 1), make_note(3, 72, 1, 1), make_note(4, 55, 1, 1)]
    ctx = ScoreContext(make_score(notes))
    voices = ActiveVoiceSet(ctx.notes, VoiceGraph(), F(4), order=[1, 0])
    chord = ctx.chords[1]
    j = JointAssignment.from_mapping(chord, {2: [0, 1], 3: [1], 4: [None]}, voices.order)
    assert j.as_dict() == {3: [1], 2: [1, 0], 4: [None]}
    assert j.rev() == {1: (3, 2), 0: (2,)}
    convs, divs, row = assignment_rows(chord, j, voices, ctx, {(2, 0): False, (2, 1): False,
                                                               (3, 1): False})
    assert all(len(r) == len(CONV_ROW_DEFS) for r in convs) and len(convs) == 2
    assert all(len(r) == len(DIV_ROW_DEFS) for r in divs) and len(divs) == 2
    assert len(row) == len(ASSIGN_DEFS)
    # unmatched, nonempty, empty, converge, diverge
    assert row[2:] == [1, 2, 1, 1, 1]
