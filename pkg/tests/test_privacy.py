import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedre import nn, privacy
from fedre.privacy import LayerBudget, PrivacySpec

scores_st = st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8)


def spec(eps=8.0, delta=1e-5, rounds=10, clip=1.0):
    return PrivacySpec(eps, delta, rounds, clip)


def test_allocation_examples():
    assert privacy.allocate_budget([1, 1, 1, 1], spec(8)).per_layer_epsilon == pytest.approx([2, 2, 2, 2])
    assert privacy.allocate_budget([1, 3], spec(4)).per_layer_epsilon == pytest.approx([3, 1], abs=1e-12)


def test_noise_multiplier_example():
    assert privacy.noise_multiplier(2.0, math.exp(-1), 2) == pytest.approx(1.0, abs=1e-15)


def test_delta_split_and_sigma():
    b = privacy.allocate_budget([1.0, 2.0], PrivacySpec(10.0, 1e-4, 5, 1.0))
    assert b.per_layer_delta == [5e-5, 5e-5]
    for e, d, s in zip(b.per_layer_epsilon, b.per_layer_delta, b.per_layer_sigma):
        assert s == pytest.approx(math.sqrt(2 * 5 * math.log(1 / d)) / e)


@given(scores_st, st.floats(0.1, 100))
@settings(max_examples=200, deadline=None)
def test_budget_conservation(scores, eps):
    sp = PrivacySpec(eps, 1e-5, 15, 1.0)
    b = privacy.allocate_budget(scores, sp)
    assert abs(math.fsum(b.per_layer_epsilon) - eps) <= 1e-9
    assert abs(math.fsum(b.per_layer_delta) - 1e-5) <= 1e-12
    assert privacy.compose_check(b, sp)
    assert all(e > 0 and math.isfinite(e) for e in b.per_layer_epsilon)


@given(scores_st)
@settings(max_examples=200, deadline=None)
def test_monotonicity(scores):
    b = privacy.allocate_budget(scores, spec())
    for i, si in enumerate(scores):
        for j, sj in enumerate(scores):
            if si > sj:
                assert b.per_layer_epsilon[i] <= b.per_layer_epsilon[j]
                assert b.per_layer_sigma[i] >= b.per_layer_sigma[j]
            if si > sj * (1 + 1e-12):
                # strict once the scores differ by more than float resolution
                assert b.per_layer_epsilon[i] < b.per_layer_epsilon[j]
                assert b.per_layer_sigma[i] > b.per_layer_sigma[j]


@given(scores_st, st.floats(1e-3, 1e3))
@settings(max_examples=200, deadline=None)
def test_scale_invariance(scores, k):
    a = privacy.allocate_budget(scores, spec()).per_layer_epsilon
    b = privacy.allocate_budget([k * s for s in scores], spec()).per_layer_epsilon
    assert np.allclose(a, b, rtol=1e-9, atol=0)


def test_zero_score_uses_floor():
    b = privacy.allocate_budget([0.0, 1.0], spec(2))
    assert all(math.isfinite(e) for e in b.per_layer_epsilon)
    assert b.per_layer_epsilon[0] > b.per_layer_epsilon[1]  # least sensitive layer gets the most budget
    with pytest.raises(ZeroDivisionError):
        privacy.allocate_budget([0.0, 1.0], PrivacySpec(2, 1e-5, 1, 1.0, s_floor=0.0))


def test_bad_scores_rejected():
    with pytest.raises(ValueError):
        privacy.allocate_budget([1.0, -1.0], spec())
    with pytest.raises(ValueError):
        privacy.allocate_budget([math.nan], spec())
    with pytest.raises(ValueError):
        privacy.allocate_budget([], spec())


def test_spec_validation():
    with pytest.raises(ValueError):
        PrivacySpec(0, 1e-5, 1, 1.0)
    with pytest.raises(ValueError):
        PrivacySpec(1, 1.0, 1, 1.0)
    with pytest.raises(ValueError):
        PrivacySpec(1, 1e-5, 0, 1.0)
    with pytest.raises(ValueError):
        PrivacySpec(1, 1e-5, 1, (1.0, 0.0))
    assert PrivacySpec(1, 1e-5, 1, 0.5).clips_for(3) == (0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        PrivacySpec(1, 1e-5, 1, (0.2, 0.15)).clips_for(3)


def test_infinite_epsilon():
    sp = PrivacySpec(math.inf, 1e-5, 3, 1.0)
    b = privacy.allocate_budget([1.0, 5.0], sp)
    assert b.per_layer_sigma == [0.0, 0.0]
    assert privacy.compose_check(b, sp)
    g = np.array([3.0, 4.0])
    assert privacy.perturb(privacy.clip(g, 1.0), 1.0, 0.0, None).tolist() == pytest.approx([0.6, 0.8])


def test_uniform_allocation():
    b = privacy.allocate_uniform(4, spec(8))
    assert b.per_layer_epsilon == [2.0] * 4
    assert privacy.compose_check(b, spec(8))


def test_compose_check_examples():
    sp = PrivacySpec(5, 1e-5, 1, 1.0)
    assert privacy.compose_check(LayerBudget([2, 3], [5e-6, 5e-6], [1, 1]), sp)
    assert not privacy.compose_check(LayerBudget([2, 3.1], [5e-6, 5e-6], [1, 1]), sp)
    assert not privacy.compose_check(LayerBudget([2, 3], [5e-6, 6e-6], [1, 1]), sp)


def test_clip_examples():
    assert privacy.clip(np.array([3.0, 4.0]), 1.0) == pytest.approx([0.6, 0.8])
    assert np.all(privacy.clip(np.zeros(3), 1.0) == 0)
    g = np.array([0.1, -0.2])
    assert np.array_equal(privacy.clip(g, 1.0), g)
    with pytest.raises(ValueError):
        privacy.clip(g, 0.0)


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3))
@settings(max_examples=200, deadline=None)
def test_clip_bound(g, C):
    out = privacy.clip(g, C)
    assert np.linalg.norm(out) <= C * (1 + 1e-12)
    if np.linalg.norm(g) <= C:
        assert np.array_equal(out, g)


def test_perturb_zero_sigma_and_determinism():
    g = np.array([0.1, 0.2, 0.3])
    assert np.array_equal(privacy.perturb(g, 1.0, 0.0, None), g)
    a = privacy.perturb(g, 1.0, 2.0, privacy.noise_stream(1, 2, 3))
    b = privacy.perturb(g, 1.0, 2.0, privacy.noise_stream(1, 2, 3))
    c = privacy.perturb(g, 1.0, 2.0, privacy.noise_stream(1, 3, 2))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_noise_statistics():
    N = 100_000
    C, sigma = 1.5, 2.0
    z = privacy.perturb(np.zeros(N), C, sigma, privacy.noise_stream(0, 0, 0))
    assert abs(z.mean()) <= 3 * C * sigma / math.sqrt(N)
    assert abs(z.var() - (C * sigma) ** 2) <= 0.05 * (C * sigma) ** 2


def test_gaussian_odd_sizes():
    rng = privacy.noise_stream(0, 0, 0)
    assert privacy.gaussian(rng, (3, 5)).shape == (3, 5)
    assert privacy.gaussian(rng, 7).shape == (7,)


def test_privatize_clips_per_layer():
    m = nn.desk_model(0, 8)
    g = nn.GradientSet([lg.scaled(100.0) for lg in nn.backward(m, np.ones((1, 8, 8)), np.eye(8)).per_layer])
    sp = PrivacySpec(10.0, 1e-5, 5, (0.1, 0.2))
    b = privacy.allocate_budget([1.0, 1.0], sp)
    noisy, norms = privacy.privatize(g, b, sp, privacy.noise_stream(0, 0, 0))
    assert norms == pytest.approx([0.1, 0.2])
    assert noisy.matches(m)
    sp_inf = PrivacySpec(math.inf, 1e-5, 5, (0.1, 0.2))
    clean, _ = privacy.privatize(g, privacy.allocate_budget([1, 1], sp_inf), sp_inf, None)
    assert clean.norms() == pytest.approx([0.1, 0.2])
