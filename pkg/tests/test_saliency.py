import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uegr import saliency as sal
from uegr.errors import EmptyBatch, InsufficientTrials, NonPositiveBeta, ShapeMismatch


def test_scores_examples():
    np.testing.assert_array_equal(sal.saliency_scores([np.array([1.0, -2.0])]), [1.0, 4.0])
    np.testing.assert_array_equal(sal.saliency_scores([np.array([1.0, 0.0]), np.array([0.0, 1.0])]), [1.0, 1.0])
    with pytest.raises(EmptyBatch):
        sal.saliency_scores([])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**31))
def test_exact_scores_equal_outer_product_diagonal(batch, seed):
    rng = np.random.default_rng(seed)
    maps = [{"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)} for _ in range(batch)]
    got = sal.saliency_scores(maps)
    for k in ("a", "b"):
        brute = np.zeros(maps[0][k].size)
        for m in maps:
            v = m[k].reshape(-1)
            brute = brute + np.diag(np.outer(v, v))
        assert np.array_equal(got[k].reshape(-1), brute)


def test_approx_scores():
    g = np.array([[1.0, 2.0], [3.0, -2.0]])
    np.testing.assert_array_equal(sal.saliency_scores(g, sal.APPROX), [8.0, 0.0])
    np.testing.assert_array_equal(sal.approx_saliency(np.array([2.0, 0.0]), 2), [8.0, 0.0])


def test_normalize_examples():
    np.testing.assert_allclose(sal.normalize(np.array([2.0, 4.0, 6.0])), [0.5, 1.0, 1.5], rtol=0, atol=1e-12)
    np.testing.assert_array_equal(sal.normalize(np.full(5, 3.7)), np.full(5, 0.5))
    np.testing.assert_array_equal(sal.normalize(np.array([0.0, 1.0])), [0.0, 1.0])


def test_normalize_is_global_across_groups():
    out = sal.normalize({"a": np.array([1.0, 2.0]), "b": np.array([5.0])})
    np.testing.assert_allclose(out["a"], [0.25, 0.5], atol=1e-12)
    np.testing.assert_allclose(out["b"], [1.25], atol=1e-12)


def test_probability_examples():
    for beta in (0.1, 1.0, 5.0, 50.0):
        assert sal.sampling_probability(np.array([0.6]), 0.6, beta)[0] == 0.5
    p = sal.sampling_probability(np.array([0.8]), 0.6, 5.0)[0]
    assert abs(p - 1 / (1 + math.exp(-2.0))) <= 1e-12
    assert abs(p - 0.88080) < 5e-6
    with pytest.raises(NonPositiveBeta):
        sal.sampling_probability(np.array([0.1]), 0.5, 0.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(0, 3)), st.floats(0, 1), st.floats(0.01, 20))
def test_orientations_are_mirror_images(s, alpha, beta):
    a = sal.sampling_probability(s, alpha, beta, sal.UPDATE_SALIENT, clamp=False)
    b = sal.sampling_probability(s, alpha, beta, sal.PAPER_LITERAL, clamp=False)
    np.testing.assert_allclose(a + b, 1.0, rtol=0, atol=1e-12)
    c = sal.sampling_probability(s, alpha, beta)
    assert np.all((c >= sal.P_FLOOR) & (c <= 1.0))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(0, 3)), st.floats(0, 1), st.floats(0.01, 20))
def test_probability_monotone_in_saliency(s, alpha, beta):
    p = sal.sampling_probability(s, alpha, beta)
    order = np.argsort(s, kind="stable")
    assert np.all(np.diff(p[order]) >= 0)


def test_mask_examples():
    rng = np.random.default_rng(0)
    assert sal.sample_mask(np.ones((4, 4)), rng).all()
    a = sal.sample_mask(np.full(100, 0.3), np.random.default_rng(9))
    b = sal.sample_mask(np.full(100, 0.3), np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_floor_rate_binomial():
    n, p = 1_000_000, sal.P_FLOOR
    rate = sal.sample_mask(np.full(n, p), np.random.default_rng(1)).mean()
    assert abs(rate - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_masked_gradient_examples():
    g = np.array([2.0, -1.0, 3.0])
    assert np.array_equal(sal.masked_gradient(g, np.ones(3), np.ones(3)), g)
    out = sal.masked_gradient(g, np.array([1.0, 0.0, 1.0]), np.array([0.5, 0.5, 1.0]))
    assert out.tolist() == [4.0, 0.0, 3.0]
    with pytest.raises(ShapeMismatch):
        sal.masked_gradient(g, np.ones(2), np.ones(3))
    with pytest.raises(ShapeMismatch):
        sal.masked_gradient({"a": g}, {"b": g}, {"a": g})


def test_force_unit_p_gives_raw_gradient():
    rng = np.random.default_rng(0)
    per = {"w": rng.normal(size=(5, 3))}
    st_ = sal.saliency_state(per, 0.8, 1.0, rng, force_unit_p=True)
    g = {"w": per["w"].mean(axis=0)}
    assert np.array_equal(sal.masked_gradient(g, st_.mask, st_.p)["w"], g["w"])
    assert st_.masked_fraction() == 0.0


def test_predicted_variance_closed_form():
    v = sal.predicted_variance([1.0, -2.0], 0.5, 16, [0.5, 0.8])
    assert v[0] == 1.03125  # 0.015625 / 0.5 + 0.5 * 1 / 0.5
    assert abs(v[1] - (0.015625 / 0.8 + 0.2 * 4 / 0.8)) < 1e-15


def test_bound_closed_form():
    p_hat = 0.5
    diag = np.array([0.25 / (p_hat * 16) + (1 - p_hat) * 1 / p_hat, 0.25 / (p_hat * 16) + (1 - p_hat) * 4 / p_hat])
    assert abs(sal.covariance_bound([1.0, -2.0], 0.5, 16, [0.5, 0.8]) - 2 * np.linalg.norm(diag)) < 1e-12


def test_unit_p_variance_is_plain_batch_variance():
    rep = sal.verify_unbiasedness([0.3, -1.0], 0.8, 8, [1.0, 1.0], 50_000, np.random.default_rng(3))
    np.testing.assert_allclose(rep["empirical_variance"], 0.64 / 8, rtol=0.03)
    assert rep["pass"]


@pytest.mark.parametrize(
    "mu,sigma,b,p",
    [
        ((1.0, -2.0), 0.5, 16, (0.5, 0.8)),
        ((0.3, 0.0, -1.5), 1.0, 4, (0.2, 0.9, 0.6)),
        ((2.0,), 0.1, 32, (0.05,)),
    ],
)
def test_monte_carlo_unbiasedness(mu, sigma, b, p):
    rep = sal.verify_unbiasedness(mu, sigma, b, p, 200_000, np.random.default_rng(11))
    assert rep["checks"] == {"mean_within_se": True, "variance_identity": True, "covariance_bound": True}
    assert set(rep) >= {"config", "empirical_mean", "standard_errors", "empirical_cov_fro", "bound_fro", "pass"}


def test_insufficient_trials():
    with pytest.raises(InsufficientTrials):
        sal.verify_unbiasedness([1.0], 1.0, 4, [0.5], 9_999, np.random.default_rng(0))
