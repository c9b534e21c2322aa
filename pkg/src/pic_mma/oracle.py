"""
Reference scatter-loop assembly of the mass matrix.

Every particle adds ``sigma * s_p * W_pg * W_pg'`` for each pair of its
support nodes ``a <= b``, in particle input order. Weights are evaluated
directly from the signed particle-node distance, one node at a time, and
cell sorting is never consulted. Deposits go through the same stencil
storage as the tiled assembler, so differences between the two isolate the
batched contraction.

The loop over particles is vectorized in blocks; within a block the
contributions are reduced particle-major, which is the scalar loop order.
"""

from __future__ import annotations

import numpy as np

from .geometry import Grid, ParticleSet, locate, node_id
from .response import Kind, coefficients
from .shape import bspline_1d, node_offsets, support_base
from .stencil import StencilMatrix, build_table

_BLOCK = 4096


def support_weights(order: int, grid: Grid, positions: np.ndarray):
    """
    Support nodes and weights of each particle, evaluated node by node.

    Returns ``(cell, base, W)`` with ``W`` of shape ``(P, (n+1)**d)`` in
    lexicographic node order.
    """
    loc = locate(grid, positions)
    base = support_base(order, loc.frac)
    offs = node_offsets(order, grid.ndim)
    u = positions / np.asarray(grid.spacing)
    W = np.ones((len(positions), len(offs)))
    for a, off in enumerate(offs):
        node = loc.cell + base + off        # unwrapped node coordinate
        for mu in range(grid.ndim):
            W[:, a] *= bspline_1d(order, u[:, mu] - node[:, mu])
    return loc.cell, base, W


def assemble_naive(particles: ParticleSet, grid: Grid, order: int, kind="scalar",
                   sigma: float | None = None, arithmetic: str = "fp64") -> StencilMatrix:
    """
    Mass matrix by direct per-particle accumulation.

    Parameters
    ----------
    arithmetic : {"fp64", "fp32"}
        ``fp32`` evaluates weights in FP64, rounds each weight product and
        coefficient to FP32 and accumulates in FP32.
    sigma : float, optional
        Defaults to ``particles.sigma``.
    """
    kind = Kind(kind)
    grid.check_order(order)
    if arithmetic not in ("fp64", "fp32"):
        raise ValueError(f"arithmetic must be fp64 or fp32, got {arithmetic!r}")
    sigma = particles.sigma if sigma is None else sigma
    dtype = np.float64 if arithmetic == "fp64" else np.float32
    store = StencilMatrix(grid, order, kind.n_components, dtype=dtype)
    if len(particles) == 0:
        return store
    d = grid.ndim
    table = build_table(order, d, np.zeros((1, d), dtype=np.int64))
    offs = node_offsets(order, d)
    n_off = len(store.offsets)
    slots = store.values.reshape(-1, kind.n_components)      # (node * n_off + offset, comp)
    for lo in range(0, len(particles), _BLOCK):
        blk = particles.take(slice(lo, lo + _BLOCK))
        cell, base, W = support_weights(order, grid, blk.positions)
        s = sigma * coefficients(kind, blk.charges, blk.omega)          # (P, nc)
        # a <= b pairs are canonical with the lower node as anchor
        support = node_id(grid, cell[:, None, :], base[:, None, :] + offs[None])
        slot = (np.take(support, table.a, axis=1) * n_off + table.offset).reshape(-1)
        ww = np.take(W, table.a, axis=1) * np.take(W, table.b, axis=1)  # (P, pairs)
        if arithmetic == "fp32":
            ww = ww.astype(np.float32)
            s = s.astype(np.float32)
        contrib = np.empty_like(ww)
        if arithmetic == "fp64":
            # reduce over the touched slot span only, particle-major
            s_lo, s_hi = int(slot.min()), int(slot.max()) + 1
            slot -= s_lo
            for c in range(kind.n_components):
                np.multiply(s[:, c, None], ww, out=contrib)
                slots[s_lo:s_hi, c] += np.bincount(slot, weights=contrib.reshape(-1),
                                                   minlength=s_hi - s_lo)
        else:
            for c in range(kind.n_components):
                np.multiply(s[:, c, None], ww, out=contrib)
                np.add.at(slots[:, c], slot, contrib.reshape(-1))
    return store


def assemble_dense(particles: ParticleSet, grid: Grid, order: int, kind="scalar",
                   sigma: float | None = None) -> np.ndarray:
    """
    Dense ``W diag(s) W^T`` per component, built from the global weight matrix.

    Small grids only; used to cross-check the stencil storage.
    """
    kind = Kind(kind)
    sigma = particles.sigma if sigma is None else sigma
    ng = grid.n_nodes
    Wg = np.zeros((ng, len(particles)))
    if len(particles):
        cell, base, W = support_weights(order, grid, particles.positions)
        offs = node_offsets(order, grid.ndim)
        nodes = node_id(grid, cell[:, None, :], base[:, None, :] + offs[None])
        np.add.at(Wg, (nodes.reshape(-1), np.repeat(np.arange(len(particles)), len(offs))),
                  W.reshape(-1))
    s = sigma * coefficients(kind, particles.charges, particles.omega)
    return np.einsum("gp,pc,hp->cgh", Wg, s, Wg)
