import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedre import datagen, nn, sensitivity
from fedre.datagen import DatasetSpec, Rect, Sample
from fedre.errors import ShapeError


def brute_force_score(jac, r):
    total = 0.0
    for i in range(r.a, r.a + r.w):
        for j in range(r.b, r.b + r.h):
            sq = 0.0
            for p in range(jac.shape[0]):
                for c in range(jac.shape[1]):
                    sq += jac[p, c, i, j] ** 2
            total += sq ** 0.5
    return total / (r.w * r.h)


def test_align_region_examples():
    assert np.all(sensitivity.align_region(np.zeros((3, 1, 4, 4)), Rect(0, 0, 2, 2)) == 0)
    j = np.zeros((1, 1, 3, 3))
    j[0, 0, 1, 2] = -3
    assert sensitivity.align_region(j, Rect(1, 2, 1, 1)).tolist() == [[3.0]]
    j = np.zeros((1, 2, 2, 2))
    j[0, :, 0, 0] = (3, 4)
    assert sensitivity.align_region(j, Rect(0, 0, 1, 1))[0, 0] == pytest.approx(5.0, abs=1e-15)


def test_align_region_shape():
    out = sensitivity.align_region(np.ones((2, 1, 6, 7)), Rect(1, 2, 3, 4))
    assert out.shape == (3, 4)


def test_align_region_errors():
    with pytest.raises(ShapeError):
        sensitivity.align_region(np.ones((2, 1, 4, 4)), Rect(3, 3, 2, 2))
    with pytest.raises(ShapeError):
        sensitivity.align_region(np.ones((2, 4, 4)), Rect(0, 0, 1, 1))


def test_psi_score_examples():
    assert sensitivity.psi_score(np.ones((3, 2))) == 1
    assert sensitivity.psi_score(np.zeros((2, 2))) == 0
    assert sensitivity.psi_score(np.array([[1, 2], [3, 4]])) == 2.5
    with pytest.raises(ValueError):
        sensitivity.psi_score(np.zeros((0, 3)))


def test_brute_force_agreement():
    rng = np.random.default_rng(0)
    jac = rng.normal(size=(5, 2, 6, 6))
    r = Rect(2, 3, 2, 2)
    got = sensitivity.psi_score(sensitivity.align_region(jac, r))
    assert abs(got - brute_force_score(jac, r)) <= 1e-12


@given(arrays(np.float64, (3, 1, 5, 5), elements=st.floats(-10, 10)), st.floats(0, 100))
@settings(max_examples=50, deadline=None)
def test_homogeneity(jac, k):
    r = Rect(1, 1, 3, 4)
    a = sensitivity.psi_score(sensitivity.align_region(jac, r))
    b = sensitivity.psi_score(sensitivity.align_region(k * jac, r))
    assert b == pytest.approx(k * a, rel=1e-12, abs=1e-12)


@given(arrays(np.float64, (2, 1, 6, 6), elements=st.floats(-5, 5)), st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_tiling_is_area_weighted_mean(jac, split):
    whole = Rect(0, 0, 4, 5)
    top, bottom = Rect(0, 0, split, 5), Rect(split, 0, 4 - split, 5)
    score = lambda r: sensitivity.psi_score(sensitivity.align_region(jac, r))
    mixed = (top.area * score(top) + bottom.area * score(bottom)) / whole.area
    assert score(whole) == pytest.approx(mixed, rel=1e-12, abs=1e-12)


def test_scalar_model_oracle():
    m = nn.Model((1, 1, 1), [nn.Dense(1, 1, bias=False), nn.LinearHead()], [(np.ones((1, 1)), np.zeros(0))], (1, 1))
    s = Sample(np.ones((1, 1, 1)), np.zeros((1, 1)), [Rect(0, 0, 1, 1)])
    scores = sensitivity.psi_scores_for_model(m, [s])
    assert scores.per_layer[0] == pytest.approx(2.0, rel=1e-8)
    assert scores.n_samples_used == 1


def test_input_independent_gradient_scores_zero():
    m = nn.desk_model(0, 8)
    m = m.with_params([(np.zeros_like(w), np.zeros_like(b)) for w, b in m.params])
    samples = datagen.generate(DatasetSpec(n_samples=3, height=8, width=8), 0)
    assert sensitivity.psi_scores_for_model(m, samples).per_layer == [0.0, 0.0]


def test_sample_psi_matches_full_jacobian_route():
    m = nn.desk_model(2, 10)
    s = datagen.generate(DatasetSpec(n_samples=1, height=10, width=10), 4)[0]
    got = sensitivity.sample_psi(m, s)
    for l in range(m.layer_count):
        jac = nn.grad_input_jacobian(m, s.image, s.tamper_mask, l, method="full")
        want = np.mean([brute_force_score(jac, r) for r in s.psi_regions])
        assert got[l] == pytest.approx(want, rel=1e-9)


def test_subset_sampling_is_seeded():
    m = nn.desk_model(1, 8)
    samples = datagen.generate(DatasetSpec(n_samples=100, height=8, width=8), 2)
    a = sensitivity.psi_scores_for_model(m, samples, 10, seed=1)
    b = sensitivity.psi_scores_for_model(m, samples, 10, seed=1)
    c = sensitivity.psi_scores_for_model(m, samples, 10, seed=2)
    assert a.per_layer == b.per_layer
    assert a.per_layer != c.per_layer
    assert a.n_samples_used == 10


def test_regionless_samples_skipped_or_rejected():
    m = nn.desk_model(1, 8)
    samples = datagen.generate(DatasetSpec(n_samples=2, height=8, width=8), 2)
    bare = Sample(samples[0].image, samples[0].tamper_mask, [], 0)
    assert sensitivity.psi_scores_for_model(m, [bare, samples[1]]).n_samples_used == 1
    with pytest.raises(ValueError):
        sensitivity.psi_scores_for_model(m, [bare])
    with pytest.raises(ValueError):
        sensitivity.psi_scores_for_model(m, [])


def test_scores_non_negative():
    m = nn.desk_model(3, 8, hidden=(3, 2))
    samples = datagen.generate(DatasetSpec(n_samples=4, height=8, width=8), 6)
    s = sensitivity.psi_scores_for_model(m, samples)
    assert len(s) == 3 and all(v >= 0 for v in s.per_layer)
