"""Numba-accelerated hot kernels with a pure-numpy fallback.

Training time is dominated by two sparse kernels: the per-edge neighborhood
combine used by graph convolution (forward, and its transpose for gradients)
and the row scatter-add behind gather gradients. Both exist in two
implementations that compute the same thing:

  * ``*_numba``: ``@njit`` loops, compiled on first use.
  * ``*_numpy``: vectorized ``np.add.at`` paths, no compilation.

Selection happens once at import via the ``GEANN_NUMBA`` environment flag:

  * ``GEANN_NUMBA=0`` forces the numpy path.
  * ``GEANN_NUMBA=1`` requires numba and raises if it cannot be imported.
  * unset or anything else: use numba when importable, else fall back.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

ENV_FLAG = "GEANN_NUMBA"


def _requested_mode() -> str:
    raw = os.environ.get(ENV_FLAG, "").strip().lower()
    if raw in ("0", "off", "false", "no"):
        return "off"
    if raw in ("1", "on", "true", "yes"):
        return "require"
    return "auto"


_MODE = _requested_mode()

NUMBA_AVAILABLE = False
if _MODE != "off":
    try:
        import numba

        NUMBA_AVAILABLE = True
    except ImportError:
        if _MODE == "require":
            raise ImportError(
                f"{ENV_FLAG}=1 requires numba, which could not be imported"
            )

USING_NUMBA = NUMBA_AVAILABLE and _MODE != "off"


def edge_combine_numpy(src, dst, coeff, self_coeff, x):
    """out[i] = self_coeff[i] * x[i]; out[dst[e]] += coeff[e] * x[src[e]]."""
    out = self_coeff[:, None] * x
    if src.size:
        np.add.at(out, dst, coeff[:, None] * x[src])
    return out


def scatter_rows_numpy(idx, g, num_rows):
    """out[idx[r]] += g[r] into a fresh (num_rows, width) buffer."""
    out = np.zeros((num_rows, g.shape[1]), dtype=np.float64)
    if idx.size:
        np.add.at(out, idx, g)
    return out


if USING_NUMBA:

    @numba.njit(cache=True)
    def _edge_combine_jit(src, dst, coeff, self_coeff, x):
        n, width = x.shape
        out = np.empty((n, width), dtype=np.float64)
        for i in range(n):
            s = self_coeff[i]
            for j in range(width):
                out[i, j] = s * x[i, j]
        for e in range(src.shape[0]):
            a = src[e]
            b = dst[e]
            c = coeff[e]
            for j in range(width):
                out[b, j] += c * x[a, j]
        return out

    @numba.njit(cache=True)
    def _scatter_rows_jit(idx, g, num_rows):
        width = g.shape[1]
        out = np.zeros((num_rows, width), dtype=np.float64)
        for r in range(idx.shape[0]):
            i = idx[r]
            for j in range(width):
                out[i, j] += g[r, j]
        return out

    def edge_combine_numba(src, dst, coeff, self_coeff, x):
        return _edge_combine_jit(
            np.ascontiguousarray(src, dtype=np.int64),
            np.ascontiguousarray(dst, dtype=np.int64),
            np.ascontiguousarray(coeff, dtype=np.float64),
            np.ascontiguousarray(self_coeff, dtype=np.float64),
            np.ascontiguousarray(x, dtype=np.float64),
        )

    def scatter_rows_numba(idx, g, num_rows):
        return _scatter_rows_jit(
            np.ascontiguousarray(idx, dtype=np.int64),
            np.ascontiguousarray(g, dtype=np.float64),
            num_rows,
        )

    edge_combine = edge_combine_numba
    scatter_rows = scatter_rows_numba
else:
    edge_combine_numba = None
    scatter_rows_numba = None
    edge_combine = edge_combine_numpy
    scatter_rows = scatter_rows_numpy


def set_thread_cap(threads: int) -> None:
    """Cap the numba threading layer; 0 leaves the automatic default."""
    if threads > 0 and USING_NUMBA:
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
