"""Separable cubic-convolution (Catmull-Rom) interpolation on the tensor grid.

One shared kernel so that the ray transform and its splatting adjoint use
literally the same weights; the adjoint is then an exact transpose.
Interpolation reproduces stored node values exactly and is C^1.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse

__all__ = ["interp2", "interp2_matrix"]


def _kernel_weights(t: np.ndarray) -> tuple[np.ndarray, ...]:
    # Keys kernel, a = -1/2; t is the fractional offset in [0,1)
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return w0, w1, w2, w3


def _stencil(x0: float, h: float, n: int, pts: np.ndarray):
    """Per-point index columns (4,) and weight columns (4,) along one axis."""
    s = (pts - x0) / h
    base = np.floor(s).astype(np.int64)
    frac = s - base
    weights = np.stack(_kernel_weights(frac), axis=-1)  # (..., 4)
    idx = base[..., None] + np.arange(-1, 3)
    np.clip(idx, 0, n - 1, out=idx)
    return idx, weights


def interp2(values: np.ndarray, x0: float, h: float, pts: np.ndarray) -> np.ndarray:
    """Interpolate grid ``values[ix, iy]`` at points ``pts[..., 2]``.

    Indices are clamped at the outer square edge, so querying slightly
    outside the grid degrades gracefully instead of failing.
    """
    n0, n1 = values.shape
    pts = np.asarray(pts, dtype=float)
    ix, wx = _stencil(x0, h, n0, pts[..., 0])
    iy, wy = _stencil(x0, h, n1, pts[..., 1])
    gathered = values[ix[..., :, None], iy[..., None, :]]  # (..., 4, 4)
    return np.einsum("...ij,...i,...j->...", gathered, wx, wy)


def interp2_matrix(n: int, x0: float, h: float, pts: np.ndarray) -> sparse.csr_matrix:
    """Sparse matrix E with (E f.ravel())[k] = interp2(f, ...)(pts[k]).

    Rows are evaluation points, columns the n*n grid nodes in row-major
    (x-index major) order.  Clamped duplicate indices are summed, matching
    interp2 exactly.
    """
    pts = np.asarray(pts, dtype=float)
    m = pts.shape[0]
    ix, wx = _stencil(x0, h, n, pts[:, 0])
    iy, wy = _stencil(x0, h, n, pts[:, 1])
    cols = (ix[:, :, None] * n + iy[:, None, :]).reshape(m, 16)
    vals = (wx[:, :, None] * wy[:, None, :]).reshape(m, 16)
    rows = np.repeat(np.arange(m), 16)
    mat = sparse.coo_matrix(
        (vals.ravel(), (rows, cols.ravel())), shape=(m, n * n)
    )
    return mat.tocsr()
