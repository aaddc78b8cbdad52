"""Compiled linear stencils on flattened grids."""
from __future__ import annotations

import numba
import numpy as np

from .grid import SENTINEL_CUTOFF


@numba.njit(cache=True)
def apply_stencil(values, masked, points, offsets, weights):
    """``sum_k weights[k] * values[p + offsets[k]]`` for each flat point p.

    NaN where any stencil node is unmasked, non-finite or a sentinel.
    """
    out = np.empty(points.shape[0])
    cut = SENTINEL_CUTOFF
    for i in range(points.shape[0]):
        p = points[i]
        acc = 0.0
        for k in range(offsets.shape[0]):
            q = p + offsets[k]
            v = values[q]
            if not masked[q] or not (v > cut) or not np.isfinite(v):
                acc = np.nan
                break
            acc += weights[k] * v
        out[i] = acc
    return out


def flat_offsets(dims, offs) -> np.ndarray:
    strides = np.array([int(np.prod(dims[a + 1:])) for a in range(len(dims))], dtype=np.int64)
    return np.asarray(offs, dtype=np.int64) @ strides


def plane_laplacian(ndim: int, j: int):
    """Nine-point Laplacian offsets and unit weights (divide by 6h^2) in complex plane j."""
    offs, w = [np.zeros(ndim, int)], [-20.0]
    a, b = 2 * j, 2 * j + 1
    for s in (1, -1):
        for ax in (a, b):
            e = np.zeros(ndim, int)
            e[ax] = s
            offs.append(e)
            w.append(4.0)
        for t in (1, -1):
            e = np.zeros(ndim, int)
            e[a], e[b] = s, t
            offs.append(e)
            w.append(1.0)
    return np.array(offs), np.array(w)
