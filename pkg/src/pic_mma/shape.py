"""
B-spline shape functions of order 1 (CIC) and 2 (TSC).

Support nodes of a particle are enumerated lexicographically with axis 0
slowest: local node ``a`` has offset ``node_offsets(n, d)[a]`` from the
stencil base ``cell + base``. The same ordering is used by the stencil
tables and the assembler.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import CellLocation

SUPPORTED_ORDERS = (1, 2)


def _check_order(n: int) -> None:
    if n not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported shape order {n}; expected 1 or 2")


def bspline_1d(n: int, t):
    """
    Centred B-spline of order ``n`` at signed distance ``t`` (cell units).

    Order 1 is the hat ``1 - |t|`` on ``[-1, 1]``; order 2 is the quadratic
    spline supported on ``[-3/2, 3/2]``.
    """
    _check_order(n)
    t = np.abs(np.asarray(t, dtype=np.float64))
    if n == 1:
        out = np.where(t <= 1.0, 1.0 - t, 0.0)
    else:
        out = np.where(
            t <= 0.5, 0.75 - t * t,
            np.where(t <= 1.5, 0.5 * (1.5 - t) ** 2, 0.0))
    return out[()] if out.ndim == 0 else out


def support_base(n: int, frac) -> np.ndarray:
    """Per-axis offset of the first support node relative to the cell index."""
    _check_order(n)
    frac = np.asarray(frac, dtype=np.float64)
    if n == 1:
        return np.zeros(frac.shape, dtype=np.int64)
    return np.where(frac < 0.5, -1, 0).astype(np.int64)


@lru_cache(maxsize=None)
def node_offsets(n: int, d: int) -> np.ndarray:
    """``((n+1)**d, d)`` local node offsets in lexicographic order."""
    _check_order(n)
    grid = np.indices((n + 1,) * d).reshape(d, -1).T
    grid.setflags(write=False)
    return grid


def support_size(n: int, d: int) -> int:
    return (n + 1) ** d


@dataclass
class WeightStencil:
    """Tensor-product weights on ``(n+1)**d`` support nodes, shape ``(..., N)``."""

    order: int
    base: np.ndarray
    weights: np.ndarray


def axis_weights(n: int, frac, base) -> np.ndarray:
    """1D weights per axis, shape ``(..., d, n+1)``."""
    frac = np.asarray(frac, dtype=np.float64)
    k = np.arange(n + 1)
    t = frac[..., None] - (np.asarray(base)[..., None] + k)
    return bspline_1d(n, t)


def weights(n: int, loc: CellLocation) -> WeightStencil:
    """Shape-function weights of each located particle on its support nodes."""
    frac = np.asarray(loc.frac, dtype=np.float64)
    base = support_base(n, frac)
    w1 = axis_weights(n, frac, base)
    d = frac.shape[-1]
    w = w1[..., 0, :]
    for mu in range(1, d):
        # axis 0 slowest: append faster axes on the right
        w = (w[..., :, None] * w1[..., mu, None, :]).reshape(*w.shape[:-1], -1)
    return WeightStencil(order=n, base=base, weights=w)


def n_groups(n: int, d: int) -> int:
    """Number of distinct support placements inside a cell."""
    _check_order(n)
    return 1 if n == 1 else 2 ** d


def group_id(n: int, loc: CellLocation) -> np.ndarray:
    """
    Support-group index of each particle.

    For order 2, axis ``mu`` contributes bit ``2**mu`` when the particle sits
    in the upper half of the cell (base offset 0). Group 0 is the all-lower
    placement.
    """
    frac = np.asarray(loc.frac, dtype=np.float64)
    if n == 1:
        return np.zeros(frac.shape[:-1], dtype=np.int64)
    bits = (support_base(n, frac) == 0).astype(np.int64)
    return bits @ (1 << np.arange(frac.shape[-1], dtype=np.int64))


def group_base(n: int, d: int, gamma: int) -> np.ndarray:
    """Base offsets shared by all particles of group ``gamma``."""
    if n == 1:
        return np.zeros(d, dtype=np.int64)
    bits = (gamma >> np.arange(d)) & 1
    return np.where(bits == 1, 0, -1).astype(np.int64)
