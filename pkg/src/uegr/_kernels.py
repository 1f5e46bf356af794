"""Hot inner loops, compiled with numba when available.

Set ``UEGR_DISABLE_NUMBA=1`` before import to force the pure-numpy path.
Both paths accumulate in the same row-major order, so results are bitwise
equal across backends.
"""

import os

import numpy as np

_DISABLE = os.environ.get("UEGR_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLE:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False


def scatter_rows_numpy(n_rows, ids, grad):
    """Sum ``grad[..., t, :]`` into row ``ids[..., t]`` of an ``n_rows`` table."""
    out = np.zeros((n_rows, grad.shape[-1]), dtype=np.float64)
    np.add.at(out, ids.reshape(-1), grad.reshape(-1, grad.shape[-1]))
    return out


def scatter_rows_per_example_numpy(n_rows, ids, grad):
    """Per-example variant: one ``n_rows`` table per leading index."""
    batch = ids.shape[0]
    flat_ids = ids.reshape(batch, -1)
    flat_grad = grad.reshape(batch, -1, grad.shape[-1])
    out = np.zeros((batch, n_rows, grad.shape[-1]), dtype=np.float64)
    b_idx = np.repeat(np.arange(batch), flat_ids.shape[1])
    np.add.at(out, (b_idx, flat_ids.reshape(-1)), flat_grad.reshape(-1, grad.shape[-1]))
    return out


def _scatter_rows_loop(n_rows, ids, grad):
    n, dim = grad.shape
    out = np.zeros((n_rows, dim), dtype=np.float64)
    for i in range(n):
        r = ids[i]
        for d in range(dim):
            out[r, d] += grad[i, d]
    return out


def _scatter_rows_per_example_loop(n_rows, ids, grad):
    batch, seq, dim = grad.shape
    out = np.zeros((batch, n_rows, dim), dtype=np.float64)
    for b in range(batch):
        for t in range(seq):
            r = ids[b, t]
            for d in range(dim):
                out[b, r, d] += grad[b, t, d]
    return out


if HAS_NUMBA:
    _scatter_rows_jit = njit(cache=True)(_scatter_rows_loop)
    _scatter_rows_per_example_jit = njit(cache=True)(_scatter_rows_per_example_loop)

    def scatter_rows(n_rows, ids, grad):
        dim = grad.shape[-1]
        return _scatter_rows_jit(
            int(n_rows),
            np.ascontiguousarray(ids.reshape(-1), dtype=np.int64),
            np.ascontiguousarray(grad.reshape(-1, dim), dtype=np.float64),
        )

    def scatter_rows_per_example(n_rows, ids, grad):
        batch, dim = ids.shape[0], grad.shape[-1]
        return _scatter_rows_per_example_jit(
            int(n_rows),
            np.ascontiguousarray(ids.reshape(batch, -1), dtype=np.int64),
            np.ascontiguousarray(grad.reshape(batch, -1, dim), dtype=np.float64),
        )

else:  # pragma: no cover
    scatter_rows = scatter_rows_numpy
    scatter_rows_per_example = scatter_rows_per_example_numpy


BACKEND = "numba" if HAS_NUMBA else "numpy"
