import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccot_emo.calibration import (
    AcousticAttributes,
    CalibrationStats,
    FeatureStats,
    discretize,
    fit_calibration,
    level_for,
    nearest_rank,
)
from ccot_emo.errors import EmptyCorpus, MissingFeature
from ccot_emo.prosody_dsp import FEATURES, AcousticProfile


def profile(v: float, silent: bool = False) -> AcousticProfile:
    return AcousticProfile(v, v, v, v, v, v, v, 1, 1, 0.0 if silent else 1.0, 2.0)


def oracle(values, q: Fraction):
    ordered = sorted(values)
    return ordered[math.ceil(q * len(ordered)) - 1]


def test_pitch_one_to_nine():
    stats = fit_calibration([profile(v) for v in range(1, 10)], "c")
    assert stats.features["pitch"].p33 == 3
    assert stats.features["pitch"].p67 == 7
    assert stats.features["pitch"].n == 9


def test_single_profile():
    stats = fit_calibration([profile(4.2)], "c")
    for name in FEATURES:
        assert stats.features[name].p33 == stats.features[name].p67 == 4.2


def test_constant_corpus():
    stats = fit_calibration([profile(7.0)] * 13, "c")
    assert stats.features["jitter"].p33 == stats.features["jitter"].p67 == 7.0


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        fit_calibration([], "c")


def test_silent_profiles_excluded_by_default():
    profiles = [profile(-96.0, silent=True)] * 5 + [profile(v) for v in (1, 2, 3)]
    stats = fit_calibration(profiles, "c")
    assert stats.features["volume"].n == 3
    assert stats.features["volume"].min == 1
    with pytest.raises(EmptyCorpus):
        fit_calibration([profile(-96.0, silent=True)], "c")
    assert fit_calibration(profiles, "c", include_silent=True).features["volume"].n == 8


@pytest.mark.parametrize("n", [1, 2, 3, 99, 100, 101, 300, 333])
def test_nearest_rank_is_exact_at_awkward_sizes(n):
    values = list(range(n))
    assert nearest_rank(values, 33) == oracle(values, Fraction(33, 100))
    assert nearest_rank(values, 67) == oracle(values, Fraction(67, 100))


def test_discretize_rule():
    stats = FeatureStats(p33=100, p67=180, n=10, min=0, max=300)
    assert level_for(90, stats) == "low"
    assert level_for(150, stats) == "normal"
    assert level_for(100, stats) == "low"
    assert level_for(180, stats) == "normal"
    assert level_for(180.0001, stats) == "high"
    tie = FeatureStats(p33=5, p67=5, n=1, min=5, max=5)
    assert level_for(5, tie) == "low"


def test_discretize_profile_and_missing_feature():
    stats = fit_calibration([profile(v) for v in range(1, 10)], "c")
    attrs = discretize(profile(8), stats)
    assert isinstance(attrs, AcousticAttributes)
    assert set(attrs.levels.values()) == {"high"}
    assert discretize(profile(8), stats) == attrs
    partial = CalibrationStats({k: v for k, v in stats.features.items() if k != "shimmer"}, "c")
    with pytest.raises(MissingFeature):
        discretize(profile(1), partial)


def test_stats_round_trip_and_id(tmp_path):
    stats = fit_calibration([profile(v) for v in range(20)], "iemocap", created_at="2026-01-01T00:00:00+00:00")
    path = tmp_path / "stats.json"
    stats.save(path)
    loaded = CalibrationStats.load(path)
    assert loaded == stats
    assert json.loads(path.read_text())["calibration_id"] == stats.calibration_id
    later = fit_calibration([profile(v) for v in range(20)], "iemocap", created_at="2027-01-01T00:00:00+00:00")
    assert later.calibration_id == stats.calibration_id


def test_attributes_require_all_features():
    with pytest.raises(ValueError):
        AcousticAttributes({"pitch": "low"})
    with pytest.raises(ValueError):
        AcousticAttributes({f: "medium" for f in FEATURES})


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=300))
def test_fit_matches_oracle(values):
    stats = fit_calibration([profile(v) for v in values], "c")
    assert stats.features["pitch"].p33 == oracle(values, Fraction(33, 100))
    assert stats.features["pitch"].p67 == oracle(values, Fraction(67, 100))
    assert stats.features["pitch"].p33 <= stats.features["pitch"].p67


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-1e3, 1e3),
    st.floats(0, 1e3),
    st.floats(-1e3, 1e3),
    st.floats(0, 1e3),
)
def test_monotone_labels(lo, width, value, delta):
    stats = FeatureStats(p33=lo, p67=lo + width, n=1, min=lo, max=lo + width)
    rank = {"low": 0, "normal": 1, "high": 2}
    assert rank[level_for(value + delta, stats)] >= rank[level_for(value, stats)]
