"""Cost model arithmetic, combination counting, and the learned predictor."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixserve.errors import InputError, TrainingError
from mixserve.latency import (
    AnalyticPredictor,
    CostModelParams,
    MlpConfig,
    MlpPredictor,
    all_compositions,
    composition_features,
    count_combinations,
    generate_dataset,
    mean_relative_error,
    standalone_latency,
    step_latency,
)

# hand-derived with the default constants:
# 60 + 2*n_res + 8*(0.1*patches + 6e-7*sum(tokens^1.5))
F_3LOW = 75.3748736
F_3HIGH = 130.5989888
F_MIX = 104.7713536
F_1LOW = 66.4582912
F_1MED = 73.4467328
F_1HIGH = 84.8663296

comp_strategy = st.builds(
    dict,
    low=st.integers(0, 6), med=st.integers(0, 6), high=st.integers(0, 6),
).filter(lambda c: sum(c.values()) > 0)


def test_step_latency_hand_computed_values():
    assert step_latency({"low": 3}) == pytest.approx(F_3LOW, rel=1e-12)
    assert step_latency({"high": 3}) == pytest.approx(F_3HIGH, rel=1e-12)
    assert step_latency({"low": 1, "med": 1, "high": 1}) == pytest.approx(F_MIX, rel=1e-12)
    assert step_latency({"low": 1}) == pytest.approx(F_1LOW, rel=1e-12)
    assert step_latency({"med": 1}) == pytest.approx(F_1MED, rel=1e-12)
    assert step_latency({"high": 1}) == pytest.approx(F_1HIGH, rel=1e-12)


def test_calibration_ratios_in_band():
    hi_lo = step_latency({"high": 3}) / step_latency({"low": 3})
    assert 1.5 <= hi_lo <= 1.9
    mixed = step_latency({"low": 1, "med": 1, "high": 1})
    singles = sum(step_latency({c: 1}) for c in ("low", "med", "high"))
    assert 0.45 <= mixed / singles <= 0.65


def test_standalone_latency_scales_steps():
    assert standalone_latency("low", 50) == pytest.approx(50 * F_1LOW, rel=1e-12)
    with pytest.raises(InputError):
        standalone_latency("low", 0)


def test_composition_validation():
    with pytest.raises(InputError):
        step_latency({})
    with pytest.raises(InputError):
        step_latency({"low": 0})
    with pytest.raises(InputError):
        step_latency({"ultra": 1})
    with pytest.raises(InputError):
        step_latency({"low": -1})


@settings(max_examples=100, deadline=None)
@given(comp_strategy, st.sampled_from(["low", "med", "high"]))
def test_adding_a_request_strictly_increases_latency(comp, cls):
    bigger = dict(comp)
    bigger[cls] = bigger.get(cls, 0) + 1
    assert step_latency(bigger) > step_latency(comp)


@settings(max_examples=100, deadline=None)
@given(comp_strategy, comp_strategy)
def test_batching_is_subadditive(a, b):
    merged = {c: a.get(c, 0) + b.get(c, 0) for c in ("low", "med", "high")}
    assert step_latency(merged) < step_latency(a) + step_latency(b)


def test_composition_features_values():
    f = composition_features({"low": 2, "high": 1})
    np.testing.assert_array_equal(f, [2, 0, 1, 2, 2 * 4 + 16])
    f = composition_features({"med": 3})
    np.testing.assert_array_equal(f, [0, 3, 0, 1, 27])


# ---------------------------------------------------------- combinations


def brute_force_count(max_batch, n_classes):
    n = 0
    for counts in itertools.product(range(max_batch + 1), repeat=n_classes):
        if 1 <= sum(counts) <= max_batch:
            n += 1
    return n


def test_count_combinations_examples():
    assert count_combinations(3, 3) == 19
    assert count_combinations(12, 3) == 454
    assert count_combinations(1, 1) == 1
    with pytest.raises(InputError):
        count_combinations(0, 3)


@pytest.mark.parametrize("m", [1, 2, 3, 5, 8])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_count_combinations_matches_enumeration(m, n):
    assert count_combinations(m, n) == brute_force_count(m, n)


def test_all_compositions_distinct_and_counted():
    comps = all_compositions(5)
    assert len(comps) == count_combinations(5, 3)
    seen = {tuple(sorted(c.items())) for c in comps}
    assert len(seen) == len(comps)
    assert all(1 <= sum(c.values()) <= 5 for c in comps)


# -------------------------------------------------------------- datasets


def test_generate_dataset_unique_and_deterministic():
    x1, y1, c1 = generate_dataset(50, seed=3)
    x2, y2, c2 = generate_dataset(50, seed=3)
    np.testing.assert_array_equal(x1, x2)
    np.testing.assert_array_equal(y1, y2)
    assert c1 == c2
    seen = {tuple(sorted(c.items())) for c in c1}
    assert len(seen) == 50
    assert (y1 > 0).all()
    with pytest.raises(InputError):
        generate_dataset(1000, seed=0)


# -------------------------------------------------------------- predictor


def test_analytic_predictor_is_exact():
    p = AnalyticPredictor()
    comp = {"low": 2, "high": 1}
    assert p.predict_step_latency(comp) == step_latency(comp)


def test_mlp_reaches_low_relative_error():
    x, y, _ = generate_dataset(200, seed=42)
    idx = np.random.default_rng(7).permutation(len(x))
    tr, ev = idx[:160], idx[160:]
    m = MlpPredictor()
    m.train(x[tr], y[tr])
    assert mean_relative_error(m.predict(x[ev]), y[ev]) < 0.05


def test_mlp_save_load_round_trip(tmp_path):
    x, y, comps = generate_dataset(60, seed=5)
    m = MlpPredictor(MlpConfig(epochs=500))
    m.train(x, y)
    path = tmp_path / "pred.json"
    m.save(path)
    m2 = MlpPredictor.load(path)
    np.testing.assert_array_equal(m.predict(x), m2.predict(x))
    comp = comps[0]
    assert m.predict_step_latency(comp) == m2.predict_step_latency(comp)


def test_mlp_untrained_predict_raises():
    with pytest.raises(TrainingError):
        MlpPredictor().predict(np.zeros((1, 5)))


def test_mlp_divergence_raises_with_context():
    x, y, _ = generate_dataset(40, seed=1)
    m = MlpPredictor(MlpConfig(epochs=200, lr=1e150, seed=9))
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingError, match="seed=9"):
            m.train(x, y)


def test_mlp_rejects_bad_training_data():
    m = MlpPredictor()
    with pytest.raises(InputError):
        m.train(np.zeros((3, 5)), np.zeros(2))
    with pytest.raises(InputError):
        m.train(np.zeros((2, 5)), np.array([1.0, -1.0]))
