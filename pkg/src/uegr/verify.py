"""Executable checks for the unbiasedness and gradient-penalty properties.

Each suite returns a JSON-ready dict with a ``pass`` flag per property.
"""

import numpy as np

from .data import SyntheticSpec, generate_synthetic
from .evaluate import taylor_residual, taylor_residual_fn
from .saliency import verify_unbiasedness

# (mu, sigma_g, batch_size, p)
THEOREM_CONFIGS = (
    ((1.0, -2.0), 0.5, 16, (0.5, 0.8)),
    ((0.3, 0.0, -1.5, 2.0), 1.0, 8, (0.2, 0.9, 0.5, 1.0)),
    ((0.05, -0.05, 0.5), 0.1, 32, (0.1, 0.3, 0.95)),
    # in one dimension the bound equals the exact variance, so Monte Carlo would straddle it
    ((2.0, 0.5), 2.0, 4, (0.7, 0.4)),
)
TAYLOR_EPS = (1e-1, 1e-2, 1e-3, 1e-4)
DYADIC_EPS = tuple(2.0**-k for k in (3, 6, 9, 12))
SLOPE_RANGE = (1.8, 2.2)


def theorem_suite(trials=200_000, seed=0, configs=THEOREM_CONFIGS):
    rng = np.random.default_rng(seed)
    reports = [verify_unbiasedness(mu, sg, b, p, trials, rng) for mu, sg, b, p in configs]
    checks = {
        "unbiased_mean": all(r["checks"]["mean_within_se"] for r in reports),
        "variance_identity": all(r["checks"]["variance_identity"] for r in reports),
        "covariance_bound": all(r["checks"]["covariance_bound"] for r in reports),
    }
    return {"reports": reports, "checks": checks, "pass": all(checks.values())}


def _quadratic(x):
    return 0.5 * float(np.sum(x * x)), x.copy()


def _linear(x):
    c = np.linspace(-1.0, 1.0, x.size).reshape(x.shape)
    return float(np.sum(c * x)), c


def quick_trained_model(seed=0, epochs=3):
    """A small model trained on synthetic data, used as a curvature probe."""
    from .trainer import TrainConfig, train

    spec = SyntheticSpec(n_examples=400, tokens_per_example=12, signal_mass=0.5, leak_mass=0.05, seed=seed)
    data = generate_synthetic(spec)
    cfg = TrainConfig(
        epochs=epochs, seed=seed, emb_init_scale=1.0, use_selective_update=False, report_eps=(),
    )
    params, _ = train(data, cfg)
    return params, data


def taylor_suite(probes=20, seed=0, params=None, data=None):
    """Quadratic and linear closed forms, then slope fits on a trained model."""
    x = np.zeros((1, 3, 4))
    x[0, 0, 0] = 1.0
    q_res, q_slope = taylor_residual_fn(_quadratic, x, DYADIC_EPS)
    quad_ratio = (q_res / np.square(DYADIC_EPS)).tolist()
    l_res, _ = taylor_residual_fn(_linear, np.ones((1, 3, 4)), TAYLOR_EPS)

    if params is None:
        params, data = quick_trained_model(seed)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(data), size=probes, replace=False)
    slopes = []
    for i in idx:
        _, slope = taylor_residual(params, (data.token_ids[i], int(data.labels[i])), TAYLOR_EPS)
        slopes.append(slope)
    lo, hi = SLOPE_RANGE
    checks = {
        "quadratic_exact": all(r == 0.5 for r in quad_ratio),
        "linear_zero": bool(np.all(np.abs(l_res) <= 1e-10)),
        "model_slope": all(lo <= s <= hi for s in slopes),
    }
    return {
        "quadratic_ratio": quad_ratio,
        "quadratic_slope": q_slope,
        "linear_residuals": l_res.tolist(),
        "model_slopes": slopes,
        "checks": checks,
        "pass": all(checks.values()),
    }


def run_all(trials=200_000, seed=0, probes=20):
    t1 = theorem_suite(trials, seed)
    t2 = taylor_suite(probes, seed)
    failed = [f"theorem.{k}" for k, ok in t1["checks"].items() if not ok]
    failed += [f"taylor.{k}" for k, ok in t2["checks"].items() if not ok]
    return {"theorem": t1, "taylor": t2, "failed": failed, "pass": not failed}
