import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uegr import autodiff as ad
from uegr.errors import EmptyDistributionList, NeedAtLeastTwoPasses, NegativeWeight, NotOneHot, ShapeMismatch
from uegr.losses import LN2, adv_loss, cross_entropy, js_divergence, one_hot, pairwise_js, total_loss

mpmath.mp.dps = 50


def mp_js(p, q):
    """Definition evaluated at 50 digits; 0 log 0 = 0."""
    total = mpmath.mpf(0)
    for pi, qi in zip(p, q):
        pi, qi = mpmath.mpf(pi), mpmath.mpf(qi)
        m = (pi + qi) / 2
        if pi > 0:
            total += pi * mpmath.log(pi / m) / 2
        if qi > 0:
            total += qi * mpmath.log(qi / m) / 2
    return total


def val(t):
    return t.item() if isinstance(t, ad.Tensor) else float(t)


def test_cross_entropy_examples():
    assert val(cross_entropy(np.array([[1.0, 0.0]]), one_hot([0], 2))) == 0.0
    assert abs(val(cross_entropy(np.array([[0.5, 0.5]]), one_hot([1], 2))) - math.log(2)) < 1e-15
    assert abs(val(cross_entropy(np.array([[0.7, 0.3]]), one_hot([0], 2))) - 0.35667494393873245) < 1e-15


def test_cross_entropy_clamps_and_averages():
    ce = val(cross_entropy(np.array([[0.0, 1.0], [0.5, 0.5]]), one_hot([0, 0], 2)))
    assert abs(ce - (-math.log(1e-12) + math.log(2)) / 2) < 1e-12


def test_cross_entropy_errors():
    with pytest.raises(NotOneHot):
        cross_entropy(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))
    with pytest.raises(ShapeMismatch):
        cross_entropy(np.array([[0.5, 0.5]]), one_hot([0], 3))


def test_adv_loss_examples():
    y = one_hot([0], 2)
    p = np.array([[0.7, 0.3]])
    assert val(adv_loss([p], y)) == val(cross_entropy(p, y))
    assert abs(val(adv_loss([p, p], y)) - val(cross_entropy(p, y))) < 1e-15
    a = np.array([[math.exp(-0.5), 1 - math.exp(-0.5)]])
    b = np.array([[math.exp(-1.5), 1 - math.exp(-1.5)]])
    assert abs(val(adv_loss([a, b], y)) - 1.0) < 1e-12
    with pytest.raises(EmptyDistributionList):
        adv_loss([], y)


def test_js_examples():
    p = np.array([[0.3, 0.7]])
    assert val(js_divergence(p, p)) == 0.0
    assert abs(val(js_divergence(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))) - math.log(2)) < 1e-12
    want = float(mp_js([0.5, 0.5], [0.9, 0.1]))
    assert abs(val(js_divergence(np.array([[0.5, 0.5]]), np.array([[0.9, 0.1]]))) - want) < 1e-15
    with pytest.raises(ShapeMismatch):
        js_divergence(np.ones((1, 2)) / 2, np.ones((1, 3)) / 3)


def simplex(k):
    return arrays(np.float64, (3, k), elements=st.floats(0, 1)).filter(lambda a: np.all(a.sum(axis=1) > 1e-3)).map(
        lambda a: a / a.sum(axis=1, keepdims=True)
    )


@settings(max_examples=150, deadline=None)
@given(simplex(4), simplex(4))
def test_js_matches_high_precision_oracle(P, Q):
    want = np.mean([float(mp_js(p, q)) for p, q in zip(P, Q)])
    assert abs(val(js_divergence(P, Q)) - want) <= 1e-12


@settings(max_examples=150, deadline=None)
@given(simplex(3), simplex(3))
def test_js_symmetric_and_bounded(P, Q):
    a, b = val(js_divergence(P, Q)), val(js_divergence(Q, P))
    assert abs(a - b) <= 1e-12
    assert 0.0 <= a <= LN2 + 1e-12


@settings(max_examples=100, deadline=None)
@given(simplex(3), arrays(np.float64, (3, 3), elements=st.floats(-1, 1)))
def test_js_identity_forward_direction(P, noise):
    # a perturbation of size <= 1e-6 keeps JS within 1e-12
    P = 0.9 * P + 0.1 / 3
    Q = np.clip(P + 1e-7 * noise, 0, None)
    Q /= Q.sum(axis=1, keepdims=True)
    assert np.max(np.abs(P - Q)) <= 1e-6
    assert val(js_divergence(P, Q)) <= 1e-12


@settings(max_examples=150, deadline=None)
@given(simplex(3), simplex(3))
def test_js_converse_pinsker(P, Q):
    # JS >= TV^2 / 2 >= max|P-Q|^2 / 2 per row, so a tiny JS forces close rows
    for p, q in zip(P, Q):
        r = val(js_divergence(p[None], q[None]))
        assert r >= np.max(np.abs(p - q)) ** 2 / 2 - 1e-12


def test_pairwise_examples():
    p = np.array([[0.2, 0.8]])
    assert val(pairwise_js([p, p, p])) == 0.0
    q = np.array([[0.6, 0.4]])
    assert val(pairwise_js([p, q])) == val(js_divergence(p, q))
    with pytest.raises(NeedAtLeastTwoPasses):
        pairwise_js([p])


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_pairwise_matches_brute_force(m):
    rng = np.random.default_rng(m)
    dists = [rng.dirichlet(np.ones(3), size=4) for _ in range(m)]
    brute = 0.0
    for a in range(m):
        for b in range(m):
            if a < b:
                brute += np.mean([float(mp_js(p, q)) for p, q in zip(dists[a], dists[b])])
    assert abs(val(pairwise_js(dists)) - brute) <= 1e-12 * len(list(itertools.combinations(range(m), 2)))


def test_total_loss_examples():
    assert abs(total_loss(1.0, 2.0, 0.5, 0.01) - 3.005) < 1e-15
    assert total_loss(1.0, 2.0, 7.0, 0.0) == 3.0
    assert total_loss(0.0, 0.0, 4.0, 0.25) == 1.0
    with pytest.raises(NegativeWeight):
        total_loss(0, 0, 0, -1e-3)


@settings(max_examples=100)
@given(*[st.integers(-(2**20), 2**20) for _ in range(4)], st.integers(0, 2**10))
def test_total_loss_linear(a, b, c, d, k):
    # dyadic values make every sum exact
    s, t, u, lam = a / 64, b / 64, c / 64, k / 1024
    assert total_loss(s + d / 64, t, u, lam) == total_loss(s, t, u, lam) + d / 64
    assert total_loss(s, t, u + d / 64, lam) - total_loss(s, t, u, lam) == lam * (d / 64)


def test_losses_are_differentiable():
    tr = ad.Trace()
    z = tr.param("z", np.array([[0.2, -0.4, 1.0], [0.0, 0.3, -0.2]]))
    z2 = tr.param("z2", np.array([[1.0, 0.0, -1.0], [0.5, 0.5, 0.0]]))
    p, q = ad.softmax(z), ad.softmax(z2)
    loss = cross_entropy(p, one_hot([0, 2], 3)) + js_divergence(p, q)
    g = ad.backward(tr, loss)
    assert g["z"].shape == (2, 3) and np.all(np.isfinite(g["z"]))
    np.testing.assert_allclose(g["z"].sum(axis=1), 0.0, atol=1e-15)
