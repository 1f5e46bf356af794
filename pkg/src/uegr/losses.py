"""Clean, adversarial and consistency losses, all batch-mean reduced and differentiable."""

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import autodiff as ad
from .errors import EmptyDistributionList, NeedAtLeastTwoPasses, NegativeWeight, NotOneHot, ShapeMismatch

PROB_FLOOR = 1e-12
LN2 = math.log(2.0)


@dataclass
class LossBundle:
    l_st: float
    l_adv: float
    l_div: float
    l_train: float
    dists: list = field(default_factory=list)


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _check_one_hot(y):
    if y.ndim != 2 or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
        raise NotOneHot("labels must be a [batch, classes] one-hot matrix")


def _safe_log(p):
    return ad.log(ad.clamp_min(p, PROB_FLOOR))


def cross_entropy(dist, labels):
    """Batch mean of ``-sum_j y_j log p_j`` with p floored at 1e-12."""
    p = ad.as_tensor(dist)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatch(f"cross_entropy: probs {p.shape} vs labels {y.shape}")
    _check_one_hot(y)
    return ad.mean(ad.sum(ad.mul(_safe_log(p), -y), axis=1))


def adv_loss(dists, labels):
    if len(dists) == 0:
        raise EmptyDistributionList("adv_loss needs at least one distribution")
    shape = ad.as_tensor(dists[0]).shape
    total = None
    for d in dists:
        if ad.as_tensor(d).shape != shape:
            raise ShapeMismatch("adv_loss: distributions differ in shape")
        ce = cross_entropy(d, labels)
        total = ce if total is None else total + ce
    return total * (1.0 / len(dists))


def _kl_rows(p, logp, logm):
    return ad.sum(p * (logp - logm), axis=-1)


def js_divergence(P, Q):
    """Batch-mean Jensen-Shannon divergence in nats, bounded by ln 2."""
    P, Q = ad.as_tensor(P), ad.as_tensor(Q)
    if P.shape != Q.shape:
        raise ShapeMismatch(f"js_divergence: {P.shape} vs {Q.shape}")
    M = (P + Q) * 0.5
    logm = _safe_log(M)
    rows = (_kl_rows(P, _safe_log(P), logm) + _kl_rows(Q, _safe_log(Q), logm)) * 0.5
    # rounding can push identical rows a few ulps below zero
    rows = ad.clamp_min(rows, 0.0)
    return ad.mean(rows) if rows.ndim else rows


def pairwise_js(dists):
    if len(dists) < 2:
        raise NeedAtLeastTwoPasses("pairwise_js needs m >= 2 distributions")
    total = None
    for a, b in combinations(range(len(dists)), 2):
        term = js_divergence(dists[a], dists[b])
        total = term if total is None else total + term
    return total


def total_loss(l_st, l_adv, l_div, lam):
    if lam < 0:
        raise NegativeWeight(f"divergence weight must be nonnegative, got {lam}")
    return l_st + l_adv + l_div * lam
