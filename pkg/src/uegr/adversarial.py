"""Single-step L2 perturbations of input embeddings."""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGradient, ShapeMismatch

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray
    epsilon: float


def _example_norms(g):
    if g.ndim <= 1:
        return np.sqrt(np.sum(g * g)).reshape(())
    return np.sqrt(np.sum(g.reshape(g.shape[0], -1) ** 2, axis=1))


def fgsm_perturbation(grad_x, epsilon, on_degenerate="raise"):
    """Scale each example's input gradient to L2 length ``epsilon``.

    Axis 0 indexes examples when ``grad_x`` has more than one dimension; a
    1-D gradient is a single example. Examples with gradient norm below 1e-12
    raise :class:`DegenerateGradient`, or get a zero perturbation when
    ``on_degenerate="zero"``.
    """
    g = np.asarray(grad_x, dtype=np.float64)
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if not np.all(np.isfinite(g)):
        raise ValueError("input gradient is not finite")
    if epsilon == 0:
        return Perturbation(np.zeros_like(g), 0.0)
    norms = _example_norms(g)
    bad = norms < DEGENERATE_NORM
    if np.any(bad):
        if on_degenerate != "zero":
            raise DegenerateGradient(f"{int(np.sum(bad))} example(s) with vanishing input gradient")
        log.info("fgsm: %d degenerate example(s), using zero perturbation", int(np.sum(bad)))
    safe = np.where(bad, 1.0, norms)
    scale = np.where(bad, 0.0, epsilon / safe)
    delta = g * scale.reshape(scale.shape + (1,) * (g.ndim - scale.ndim))
    return Perturbation(delta, float(epsilon))


def perturb_embeddings(embeddings, p):
    x = np.asarray(embeddings, dtype=np.float64)
    if x.shape != p.delta.shape:
        raise ShapeMismatch(f"embeddings {x.shape} vs perturbation {p.delta.shape}")
    return x + p.delta
