import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dua_d2c.aggregate import (
    AggregationWeights,
    WeightingConfig,
    aggregate_params,
    composite_score,
    confidence_score,
    dua_weights,
    normalize_scores,
    uniform_weights,
)
from dua_d2c.models import MLPConfig, init_params, ParamVector

# frozen from a 60-digit mpmath evaluation of the confidence formula
# (inv_e = 1/(eps+delta_e) capped at c_max, min-max scaled, clamped):
#   eps=ln(4), K=4          -> 2.601019941704953715568881e-18
#   eps=0.0,   K=10         -> 0.999999998954598804170181
#   eps=0.2,   K=10         -> 0.4772993749046606724697686
U_MAX_ENTROPY_K4 = 2.601019941704953715568881e-18
U_ZERO_ENTROPY_K10 = 0.999999998954598804170181
U_POINT2_K10 = 0.4772993749046606724697686


def mp_confidence(eps_i, cfg):
    # independent high-precision re-evaluation of the same formula
    from mpmath import mp, mpf

    mp.dps = 60
    inv_e = 1 / (mpf(eps_i) + mpf(cfg.delta_e))
    if inv_e > mpf(cfg.c_max):
        inv_e = mpf(cfg.c_max)
    inv_e_min = 1 / (mp.log(cfg.num_classes) + mpf(cfg.delta_e))
    u = (inv_e - inv_e_min) / (mpf(cfg.c_max) - inv_e_min + mpf(cfg.eps_s))
    return float(min(max(u, mpf(0)), mpf(1)))


def test_confidence_max_entropy_is_zero():
    cfg = WeightingConfig(num_classes=4)
    u = confidence_score(math.log(4), cfg)
    assert abs(u) <= 1e-6
    assert abs(u - U_MAX_ENTROPY_K4) <= 1e-9


def test_confidence_zero_entropy_caps_out():
    cfg = WeightingConfig(num_classes=10)
    u = confidence_score(0.0, cfg)
    assert u == pytest.approx(1.0, abs=1e-6)
    assert abs(u - U_ZERO_ENTROPY_K10) <= 1e-9


def test_confidence_worked_mid_case():
    cfg = WeightingConfig(num_classes=10)
    u = confidence_score(0.2, cfg)
    assert abs(u - U_POINT2_K10) <= 1e-9
    assert u == pytest.approx(0.4773, abs=1e-4)


def test_confidence_matches_high_precision_oracle():
    for eps_i, k in [(math.log(4), 4), (0.0, 10), (0.2, 10), (1.5, 7), (0.05, 3)]:
        cfg = WeightingConfig(num_classes=k)
        assert abs(confidence_score(eps_i, cfg) - mp_confidence(eps_i, cfg)) <= 1e-9


def test_confidence_rejects_negative_entropy():
    cfg = WeightingConfig(num_classes=3)
    with pytest.raises(ValueError):
        confidence_score(-0.1, cfg)


def test_weighting_config_cap_must_exceed_floor():
    # 1/ln(2) ~ 1.44, so a cap of 1.0 leaves no scaling range
    with pytest.raises(ValueError):
        WeightingConfig(num_classes=2, c_max=1.0)
    WeightingConfig(num_classes=2, c_max=1.5)  # just above the floor


@settings(max_examples=60, deadline=None)
@given(
    e_lo=st.floats(min_value=0.11, max_value=3.0),
    delta=st.floats(min_value=1e-6, max_value=1.0),
    k=st.integers(min_value=2, max_value=12),
)
def test_confidence_monotone_below_cap(e_lo, delta, k):
    # 1/(eps + 1e-8) < 10 for eps > 0.1, so both points sit below the cap
    cfg = WeightingConfig(num_classes=k)
    assert confidence_score(e_lo, cfg) >= confidence_score(e_lo + delta, cfg)


@settings(max_examples=60, deadline=None)
@given(eps_i=st.floats(min_value=0.0, max_value=50.0), k=st.integers(min_value=2, max_value=12))
def test_confidence_range_property(eps_i, k):
    u = confidence_score(eps_i, WeightingConfig(num_classes=k))
    assert 0.0 <= u <= 1.0


def test_composite_extremes_exact():
    assert composite_score(0.37, 0.91, 1.0) == 0.37
    assert composite_score(0.37, 0.91, 0.0) == 0.91


def test_composite_worked_case():
    assert composite_score(0.9, 0.5, 0.7) == pytest.approx(0.78, abs=1e-12)


def test_composite_rejects_out_of_range():
    with pytest.raises(ValueError):
        composite_score(1.2, 0.5, 0.7)
    with pytest.raises(ValueError):
        composite_score(0.5, -0.1, 0.7)
    with pytest.raises(ValueError):
        composite_score(0.5, 0.5, 1.3)


def test_normalize_proportional():
    alpha = normalize_scores([2.0, 1.0, 1.0])
    assert alpha.tolist() == [0.5, 0.25, 0.25]
    assert alpha.sum() == 1.0


def test_normalize_singleton():
    assert normalize_scores([5.0]).tolist() == [1.0]


def test_normalize_all_zero_warns_uniform():
    with pytest.warns(UserWarning, match="uniform"):
        alpha = normalize_scores([0.0, 0.0, 0.0])
    assert alpha.tolist() == [1 / 3, 1 / 3, 1 / 3]
    assert alpha.sum() == 1.0


def test_normalize_rejects_bad_input():
    with pytest.raises(ValueError):
        normalize_scores([])
    with pytest.raises(ValueError):
        normalize_scores([0.5, -0.1])
    with pytest.raises(ValueError):
        normalize_scores([0.5, np.nan])
    with pytest.raises(ValueError):
        normalize_scores([1.0, 2.0], eps_s=0.0)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        min_size=1,
        max_size=16,
    ).filter(lambda s: sum(s) > 0)
)
def test_normalize_sum_is_exactly_one(scores):
    alpha = normalize_scores(scores)
    assert alpha.sum() == 1.0
    assert (alpha >= 0).all()


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=10),
    st.integers(min_value=-30, max_value=30),
)
def test_normalize_power_of_two_scale_invariance(scores, exp):
    s = np.asarray(scores)
    assert np.array_equal(normalize_scores(s), normalize_scores(s * 2.0**exp))


def test_normalize_monotone_in_score():
    base = np.array([0.4, 0.5, 0.6])
    bumped = np.array([0.55, 0.5, 0.6])
    a0 = normalize_scores(base)
    a1 = normalize_scores(bumped)
    assert a1[0] > a0[0]


def test_uniform_weights():
    assert uniform_weights(4).tolist() == [0.25] * 4
    assert uniform_weights(1).tolist() == [1.0]
    for n in (1, 2, 3, 5, 8, 13):
        w = uniform_weights(n)
        assert w.sum() == 1.0
        assert np.dot(w, w) == pytest.approx(1.0 / n, rel=1e-12)


def test_dua_weights_combines_parts():
    cfg = WeightingConfig(num_classes=4, lambda_=0.7)
    w = dua_weights([0.9, 0.6], [0.3, 1.2], cfg)
    u0 = confidence_score(0.3, cfg)
    u1 = confidence_score(1.2, cfg)
    assert w.confidence.tolist() == [u0, u1]
    s0 = composite_score(0.9, u0, 0.7)
    s1 = composite_score(0.6, u1, 0.7)
    assert w.score.tolist() == [s0, s1]
    assert np.array_equal(w.alpha, normalize_scores([s0, s1]))
    assert w.alpha[0] > w.alpha[1]  # better accuracy and lower entropy


def test_aggregation_weights_validation():
    with pytest.raises(ValueError):
        AggregationWeights(np.array([0.5]), np.array([0.5]), np.array([0.9]))
    with pytest.raises(ValueError):
        AggregationWeights(np.array([1.5]), np.array([0.5]), np.array([1.0]))
    w = AggregationWeights(np.array([0.5, 0.5]), np.array([0.3, 0.3]), np.array([0.5, 0.5]))
    assert len(w) == 2


def _two_params():
    cfg = MLPConfig(layer_sizes=(3, 4, 2), seed=0)
    a = init_params(cfg)
    b = init_params(MLPConfig(layer_sizes=(3, 4, 2), seed=1))
    return a, b


def test_aggregate_selection_is_bit_equal():
    a, b = _two_params()
    out = aggregate_params([a, b], [1.0, 0.0])
    assert np.array_equal(out.values, a.values)
    assert out.descriptor == a.descriptor


def test_aggregate_identical_inputs():
    a, _ = _two_params()
    out = aggregate_params([a, a, a], [0.2, 0.5, 0.3])
    np.testing.assert_allclose(out.values, a.values, atol=1e-12, rtol=0)


def test_aggregate_arithmetic_example():
    desc = (("dense", 1, 2),)  # 2 weights + 1 bias = 3 values
    p = ParamVector(np.array([1.0, 2.0, 3.0]), desc)
    q = ParamVector(np.array([3.0, 2.0, 1.0]), desc)
    out = aggregate_params([p, q], [0.25, 0.75])
    assert out.values.tolist() == [2.5, 2.0, 1.5]


def test_aggregate_permutation_equivariance():
    a, b = _two_params()
    fwd = aggregate_params([a, b], [0.3, 0.7])
    rev = aggregate_params([b, a], [0.7, 0.3])
    np.testing.assert_allclose(fwd.values, rev.values, atol=1e-13, rtol=0)


def test_aggregate_rejects_mismatch():
    a, _ = _two_params()
    other = init_params(MLPConfig(layer_sizes=(3, 5, 2), seed=0))
    with pytest.raises(ValueError):
        aggregate_params([a, other], [0.5, 0.5])
    with pytest.raises(ValueError):
        aggregate_params([a], [0.5, 0.5])
    with pytest.raises(ValueError):
        aggregate_params([a, a], [0.8, 0.8])  # sum far from 1


def test_sum_alpha_squared_bounds():
    rng = np.random.default_rng(3)
    for _ in range(50):
        alpha = normalize_scores(rng.random(6) + 1e-3)
        q = float(np.dot(alpha, alpha))
        assert q <= 1.0 + 1e-15
    one_hot = normalize_scores([1.0, 0.0, 0.0])
    assert np.dot(one_hot, one_hot) == 1.0
    uni = uniform_weights(6)
    assert np.dot(uni, uni) == pytest.approx(1 / 6, rel=1e-12)
