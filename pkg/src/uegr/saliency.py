"""Selective gradient updates driven by a Fisher-diagonal saliency score.

Gradient maps are plain ``dict[str, ndarray]`` keyed by parameter group.
Every function here also accepts a bare ndarray in place of a map.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import EmptyBatch, InsufficientTrials, NonPositiveBeta, ShapeMismatch

P_FLOOR = 1e-3
P_CEIL = 1.0 - 1e-9
DEGENERATE_SPREAD = 1e-12

UPDATE_SALIENT = "update_salient"
PAPER_LITERAL = "paper_literal"
ORIENTATIONS = (UPDATE_SALIENT, PAPER_LITERAL)

EXACT = "exact"
APPROX = "approx"


@dataclass
class SaliencyState:
    s: dict
    s_norm: dict
    p: dict
    mask: dict

    def masked_fraction(self):
        total = sum(m.size for m in self.mask.values())
        kept = sum(float(m.sum()) for m in self.mask.values())
        return 1.0 - kept / total if total else 0.0


def _apply(fn, x, *rest):
    if isinstance(x, dict):
        return {k: fn(v, *(r[k] for r in rest)) for k, v in x.items()}
    return fn(np.asarray(x, dtype=np.float64), *(np.asarray(r, dtype=np.float64) for r in rest))


def _values(x):
    return list(x.values()) if isinstance(x, dict) else [np.asarray(x, dtype=np.float64)]


def _stack_examples(per_example):
    # sequence of maps -> map of [B, ...] arrays
    if isinstance(per_example, dict):
        return per_example
    seq = list(per_example)
    if not seq:
        raise EmptyBatch("no per-example gradients supplied")
    if isinstance(seq[0], dict):
        return {k: np.stack([np.asarray(m[k], dtype=np.float64) for m in seq]) for k in seq[0]}
    return np.stack([np.asarray(g, dtype=np.float64) for g in seq])


def saliency_scores(per_example, mode=EXACT):
    """Sum over examples of squared per-example gradients.

    ``per_example`` is a sequence of gradient maps, or a map whose arrays
    carry examples on axis 0. ``mode="approx"`` instead squares the mean
    gradient and multiplies by the batch size.
    """
    stacked = _stack_examples(per_example)

    def exact(g):
        if g.shape[0] == 0:
            raise EmptyBatch("empty batch")
        s = np.zeros(g.shape[1:])
        for gi in g:
            s += gi * gi
        return s

    def approx(g):
        if g.shape[0] == 0:
            raise EmptyBatch("empty batch")
        m = g.mean(axis=0)
        return g.shape[0] * (m * m)

    if mode == EXACT:
        return _apply(exact, stacked)
    if mode == APPROX:
        return _apply(approx, stacked)
    raise ValueError(f"unknown saliency mode {mode!r}")


def approx_saliency(batch_grad, batch_size):
    """APPROX scores from an already-averaged batch gradient."""
    if batch_size < 1:
        raise EmptyBatch("batch size must be positive")
    return _apply(lambda g: batch_size * (g * g), batch_grad)


def normalize(s):
    """Divide by the global (max - min) over every group; constant input maps to 0.5."""
    vals = _values(s)
    if any(np.any(v < 0) for v in vals):
        raise ValueError("saliency scores must be nonnegative")
    hi = max(float(np.max(np.abs(v))) for v in vals)
    lo = min(float(np.min(np.abs(v))) for v in vals)
    spread = hi - lo
    if spread < DEGENERATE_SPREAD:
        return _apply(lambda v: np.full(v.shape, 0.5), s)
    return _apply(lambda v: v / spread, s)


def sampling_probability(s_norm, alpha, beta, orientation=UPDATE_SALIENT, clamp=True):
    """Logistic step around ``alpha`` with sharpness ``2 * beta``.

    ``update_salient`` rises with saliency; ``paper_literal`` is its mirror
    image. Results are clamped to [1e-3, 1 - 1e-9] unless ``clamp=False``.
    """
    if beta <= 0:
        raise NonPositiveBeta(f"beta must be positive, got {beta}")
    if orientation not in ORIENTATIONS:
        raise ValueError(f"unknown orientation {orientation!r}")
    sign = 1.0 if orientation == UPDATE_SALIENT else -1.0

    def prob(v):
        p = expit(sign * 2.0 * beta * (v - alpha))
        return np.clip(p, P_FLOOR, P_CEIL) if clamp else p

    return _apply(prob, s_norm)


def sample_mask(p, rng):
    """Independent Bernoulli(p) indicators, drawn group by group in map order."""
    def draw(v):
        if np.any(v <= 0) or np.any(v > 1):
            raise ValueError("keep probabilities must lie in (0, 1]")
        return (rng.random(v.shape) < v).astype(np.float64)

    return _apply(draw, p)


def masked_gradient(g, mask, p):
    """Inverse-probability-weighted masked gradient ``mask * g / p``."""
    def scale(gv, mv, pv):
        if gv.shape != mv.shape or np.broadcast_shapes(gv.shape, pv.shape) != gv.shape:
            raise ShapeMismatch(f"masked_gradient: g {gv.shape}, mask {mv.shape}, p {pv.shape}")
        return gv * mv / pv

    if isinstance(g, dict):
        if set(g) != set(mask) or set(g) != set(p):
            raise ShapeMismatch("gradient, mask and probability maps have different groups")
    return _apply(scale, g, mask, p)


def saliency_state(per_example, alpha, beta, rng, *, mode=EXACT, orientation=UPDATE_SALIENT, force_unit_p=False):
    """Scores -> normalized scores -> probabilities -> sampled mask, in one call."""
    s = saliency_scores(per_example, mode)
    s_norm = normalize(s)
    if force_unit_p:
        p = _apply(lambda v: np.ones(v.shape), s)
    else:
        p = sampling_probability(s_norm, alpha, beta, orientation)
    return SaliencyState(s, s_norm, p, sample_mask(p, rng))


# ---------------------------------------------------------------- Monte-Carlo check


def covariance_bound(mu, sigma_g, batch_size, p):
    """Frobenius bound d * ||sigma^2 I / (p_min |B|) + (1 - p_min) diag(mu)^2 / p_min||_F."""
    mu = np.asarray(mu, dtype=np.float64)
    p_hat = float(np.min(p))
    d = mu.size
    diag = sigma_g**2 / (p_hat * batch_size) + (1.0 - p_hat) * mu**2 / p_hat
    return d * float(np.sqrt(np.sum(diag**2)))


def predicted_variance(mu, sigma_g, batch_size, p):
    """Per-component Var of the masked batch-mean gradient."""
    mu, p = np.asarray(mu, dtype=np.float64), np.asarray(p, dtype=np.float64)
    return (sigma_g**2 / batch_size) / p + (1.0 - p) * mu**2 / p


def verify_unbiasedness(mu, sigma_g, batch_size, p, trials, rng, chunk=20000, var_rtol=0.03, n_se=3.0):
    """Simulate masked SGD gradients under Gaussian per-example noise.

    Each trial draws ``batch_size`` gradients from N(mu, sigma_g^2 I),
    averages them, masks and rescales with :func:`sample_mask` and
    :func:`masked_gradient`. Returns a JSON-ready report.
    """
    mu = np.asarray(mu, dtype=np.float64)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), mu.shape).copy()
    if trials < 10_000:
        raise InsufficientTrials(f"need at least 1e4 trials, got {trials}")
    if sigma_g <= 0:
        raise ValueError("sigma_g must be positive")
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p must lie in (0, 1]")
    d = mu.size
    total = np.zeros(d)
    outer = np.zeros((d, d))
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        g = rng.normal(mu, sigma_g, size=(n, batch_size, d)).mean(axis=1)
        mask = sample_mask(np.broadcast_to(p, g.shape), rng)
        gh = masked_gradient(g, mask, p)
        total += gh.sum(axis=0)
        outer += gh.T @ gh
        done += n
    mean = total / trials
    cov = (outer - trials * np.outer(mean, mean)) / (trials - 1)
    var = np.diag(cov).copy()
    se = np.sqrt(var / trials)
    pred = predicted_variance(mu, sigma_g, batch_size, p)
    cov_fro = float(np.sqrt(np.sum(cov**2)))
    bound = covariance_bound(mu, sigma_g, batch_size, p)
    checks = {
        "mean_within_se": bool(np.all(np.abs(mean - mu) <= n_se * se)),
        "variance_identity": bool(np.all(np.abs(var - pred) <= var_rtol * pred)),
        "covariance_bound": bool(cov_fro <= bound),
    }
    return {
        "config": {
            "mu": mu.tolist(),
            "sigma_g": float(sigma_g),
            "batch_size": int(batch_size),
            "p": p.tolist(),
            "trials": int(trials),
        },
        "empirical_mean": mean.tolist(),
        "standard_errors": se.tolist(),
        "empirical_variance": var.tolist(),
        "predicted_variance": pred.tolist(),
        "empirical_cov_fro": cov_fro,
        "bound_fro": bound,
        "checks": checks,
        "pass": all(checks.values()),
    }
