"""
Cell-local mass-matrix assembly through MMA tiles.

For each cell the particles are split into support groups (particles that
touch the same ``(n+1)**d`` nodes). Within a group the weights form an
``N x P`` matrix ``W`` and each component of the cell block is the product
``(W diag(s)) @ W.T``. That product is fed to the tile engine ``Kt``
particles at a time: operand ``A`` holds the scaled weights of one batch,
operand ``B`` the unscaled weights, and every batch adds ``A @ B`` into the
group accumulator. Incomplete batches and the rows beyond ``N`` are zero.

Particles of a cell are loaded in chunks of at most ``chunk`` particles;
batches never straddle chunks, and accumulators persist across chunks.

The kernel is vectorized over many ``(cell, group)`` accumulators at once,
stepping through batch index ``beta`` in lockstep; each accumulator still
sees exactly its own sequence of batches in order.
"""

from __future__ import annotations

import concurrent.futures as cf
from dataclasses import dataclass, field

import numpy as np

from .geometry import CellLocation, Grid, ParticleSet, is_sorted, locate, node_id
from .mma import FP64, PrecisionPolicy, TilePlan, TileShape, mma_prerounded, plan
from .response import Kind, coefficients
from .shape import group_base, group_id, n_groups, support_size, weights
from .stencil import DepositTable, StencilMatrix, build_table

DEFAULT_CHUNK = 64
# accumulator bytes held per block of cells
_BLOCK_BYTES = 2 ** 20


class UnsortedParticlesError(ValueError):
    pass


@dataclass
class BatchOperands:
    """
    MMA operands of one batch.

    ``A`` has shape ``(n_components, N_pad, Kt)``, ``B`` ``(Kt, N_pad)``;
    ``count`` is the number of real particles.
    """

    A: np.ndarray
    B: np.ndarray
    count: int


def partition_groups(order: int, frac) -> dict[int, np.ndarray]:
    """Indices of the particles in each nonempty support group, in input order."""
    frac = np.asarray(frac, dtype=np.float64)
    if frac.shape[0] == 0:
        return {}
    gid = group_id(order, CellLocation(cell=np.zeros(frac.shape, np.int64), frac=frac))
    return {int(g): np.flatnonzero(gid == g) for g in np.unique(gid)}


def build_batch(w: np.ndarray, s: np.ndarray, beta: int, Kt: int, n_pad: int) -> BatchOperands:
    """
    Operands of batch ``beta`` for one group.

    ``w`` is ``(P, N)`` weights of the group's particles, ``s`` is
    ``(P, n_components)`` coefficients.
    """
    w = np.asarray(w, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    P, N = w.shape
    nb = -(-P // Kt)
    if not 0 <= beta < nb:
        raise IndexError(f"batch {beta} out of range for {P} particles and Kt={Kt}")
    sl = slice(beta * Kt, min(P, (beta + 1) * Kt))
    count = sl.stop - sl.start
    B = np.zeros((Kt, n_pad))
    B[:count, :N] = w[sl]
    A = np.zeros((s.shape[1], n_pad, Kt))
    A[:, :, :count] = B.T[None, :, :count] * s[sl].T[:, None, :]
    return BatchOperands(A=A, B=B, count=count)


@dataclass
class CellAccumulator:
    """
    Finished accumulators of one cell.

    ``tiles[gamma][(r, c)]`` is the ``(n_components, Mt, Nt)`` tile of group
    ``gamma``; tiles skipped by a symmetric plan are absent. ``bases[gamma]``
    is the group's support base offset.
    """

    plan: TilePlan
    n_components: int
    tiles: dict[int, dict[tuple[int, int], np.ndarray]] = field(default_factory=dict)
    bases: dict[int, np.ndarray] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def block(self, gamma: int) -> np.ndarray:
        """``(n_components, N, N)`` block; skipped tiles filled by symmetry."""
        p = self.plan
        Mt, Nt = p.shape.Mt, p.shape.Nt
        out = np.zeros((self.n_components, p.n_pad, p.n_pad_cols),
                       dtype=next(iter(self.tiles[gamma].values())).dtype)
        for (r, c), t in self.tiles[gamma].items():
            out[:, r * Mt:(r + 1) * Mt, c * Nt:(c + 1) * Nt] = t
        if p.symmetric:
            for r in range(p.tile_rows):
                for c in range(r):
                    out[:, r * Mt:(r + 1) * Mt, c * Nt:(c + 1) * Nt] = \
                        np.swapaxes(self.tiles[gamma][(c, r)], -1, -2)
        return out[:, :p.n, :p.n]


# ----------------------------------------------------------------------
# vectorized kernel


@dataclass
class _Layout:
    """Batch bookkeeping for a block of particles."""

    n_acc: int
    acc: np.ndarray      # accumulator index per particle
    beta: np.ndarray     # batch index within the accumulator
    slot: np.ndarray     # column k within the batch
    n_batches: np.ndarray  # batches per accumulator


def _layout(cell: np.ndarray, gamma: np.ndarray, G: int, Kt: int, chunk: int) -> _Layout:
    """
    Assign every particle to (accumulator, batch, slot).

    ``cell`` is a block-local, nondecreasing cell index. Accumulator id is
    ``cell * G + gamma``. Within a cell, particles are loaded in chunks of
    ``chunk``; inside a chunk each group fills batches of ``Kt`` in particle
    order.
    """
    P = len(cell)
    n_cells = int(cell[-1]) + 1 if P else 0
    n_acc = n_cells * G
    if P == 0:
        z = np.zeros(0, dtype=np.int64)
        return _Layout(n_acc, z, z, z, np.zeros(n_acc, dtype=np.int64))
    first = np.searchsorted(cell, np.arange(n_cells))
    rank_in_cell = np.arange(P) - first[cell]
    ch = rank_in_cell // chunk
    n_ch = int(ch.max()) + 1
    acc = cell * G + gamma
    # sub-segment = (accumulator, chunk); stable order keeps particle order inside
    sub = acc * n_ch + ch
    order = np.argsort(sub, kind="stable")
    sub_sorted = sub[order]
    sub_first = np.searchsorted(sub_sorted, sub_sorted)
    rank = np.empty(P, dtype=np.int64)
    rank[order] = np.arange(P) - sub_first
    sub_count = np.bincount(sub, minlength=n_acc * n_ch).reshape(n_acc, n_ch)
    sub_batches = -(-sub_count // Kt)
    batch_start = np.cumsum(sub_batches, axis=1) - sub_batches
    beta = batch_start[acc, ch] + rank // Kt
    return _Layout(n_acc=n_acc, acc=acc, beta=beta, slot=rank % Kt,
                   n_batches=sub_batches.sum(axis=1))


def _accumulate(w: np.ndarray, s: np.ndarray, lay: _Layout, tplan: TilePlan,
                policy: PrecisionPolicy) -> dict[tuple[int, int], np.ndarray]:
    """Run all batches; returns tile accumulators ``(n_acc, n_comp, Mt, Nt)``."""
    shape = tplan.shape
    Mt, Nt, Kt = shape.Mt, shape.Nt, shape.Kt
    nc = s.shape[1]
    N = w.shape[1]
    tiles = {rc: np.zeros((lay.n_acc, nc, Mt, Nt), dtype=policy.dtype) for rc in tplan.tiles}
    if len(w) == 0:
        return tiles
    n_steps = int(lay.n_batches.max())
    by_beta = np.argsort(lay.beta, kind="stable")
    bounds = np.searchsorted(lay.beta[by_beta], np.arange(n_steps + 1))
    for beta in range(n_steps):
        active = np.flatnonzero(lay.n_batches > beta)
        pos = np.full(lay.n_acc, -1, dtype=np.int64)
        pos[active] = np.arange(len(active))
        members = by_beta[bounds[beta]:bounds[beta + 1]]
        row = pos[lay.acc[members]]
        k = lay.slot[members]
        # B: (n_active, Kt, N_pad); zero beyond count and beyond N
        B = np.zeros((len(active), Kt, tplan.n_pad_cols))
        B[row, k, :N] = w[members]
        # A: (n_active, n_comp, N_pad, Kt), column k scaled by s of that particle
        S = np.zeros((len(active), nc, Kt))
        S[row, :, k] = s[members]
        Bt = np.zeros((len(active), tplan.n_pad, Kt))
        Bt[row, :N, k] = w[members]
        # round to the input format once per batch rather than once per tile
        A = policy.cast_input(Bt[:, None, :, :] * S[:, :, None, :])
        B = policy.cast_input(B)
        for (r, c) in tplan.tiles:
            a_op = A[:, :, r * Mt:(r + 1) * Mt, :]
            b_op = B[:, None, :, c * Nt:(c + 1) * Nt]
            if len(active) == lay.n_acc:
                mma_prerounded(tiles[(r, c)], a_op, b_op)
            else:
                d = tiles[(r, c)][active]
                mma_prerounded(d, a_op, b_op)
                tiles[(r, c)][active] = d
    return tiles


def _gather_pairs(tiles, tplan: TilePlan, table: DepositTable) -> np.ndarray:
    """Accumulator entries ``(a, b)`` of every table pair: ``(n_acc, n_pairs, n_comp)``."""
    tr, tc, ir, ic = tplan.tile_of(table.a, table.b)
    some = next(iter(tiles.values()))
    out = np.empty((some.shape[0], table.n_pairs, some.shape[1]), dtype=some.dtype)
    for (r, c), t in tiles.items():
        m = np.flatnonzero((tr == r) & (tc == c))
        if m.size:
            out[:, m, :] = np.moveaxis(t[:, :, ir[m], ic[m]], 1, 2)
    return out


@dataclass
class _Prepared:
    cell: np.ndarray
    gamma: np.ndarray
    w: np.ndarray
    s: np.ndarray


def _prepare(particles: ParticleSet, grid: Grid, order: int, kind: Kind) -> _Prepared:
    if len(particles) == 0:
        d = grid.ndim
        return _Prepared(np.zeros(0, np.int64), np.zeros(0, np.int64),
                         np.zeros((0, support_size(order, d))),
                         np.zeros((0, kind.n_components)))
    loc = locate(grid, particles.positions)
    return _Prepared(
        cell=grid.linear_index(loc.cell),
        gamma=group_id(order, loc),
        w=weights(order, loc).weights,
        s=coefficients(kind, particles.charges, particles.omega),
    )


def _assemble_range(prep: _Prepared, lo: int, hi: int, grid: Grid, order: int,
                    tplan: TilePlan, policy: PrecisionPolicy, table: DepositTable,
                    sigma: float, chunk: int, store: StencilMatrix) -> None:
    """Assemble particles ``lo:hi`` (whole cells) into ``store``."""
    if hi <= lo:
        return
    G = n_groups(order, grid.ndim)
    cells = prep.cell[lo:hi]
    uniq, local = np.unique(cells, return_inverse=True)
    lay = _layout(local.astype(np.int64), prep.gamma[lo:hi], G, tplan.shape.Kt, chunk)
    tiles = _accumulate(prep.w[lo:hi], prep.s[lo:hi], lay, tplan, policy)
    vals = _gather_pairs(tiles, tplan, table)              # (n_acc, pairs, comp)
    acc_cell = uniq[np.arange(lay.n_acc) // G]
    acc_gamma = np.arange(lay.n_acc) % G
    used = np.flatnonzero(lay.n_batches > 0)
    cell_xyz = grid.unravel(acc_cell[used])
    anchors = table.anchor[acc_gamma[used]]                 # (n_used, pairs, d)
    nodes = node_id(grid, cell_xyz[:, None, :], anchors)
    offs = np.broadcast_to(table.offset, nodes.shape)
    store.add_at(nodes.reshape(-1), offs.reshape(-1),
                 store.dtype.type(sigma) * vals[used].reshape(-1, vals.shape[-1]))


def _cell_blocks(cells: np.ndarray, max_cells: int) -> list[tuple[int, int]]:
    """Split a sorted cell-index array into particle ranges of at most ``max_cells`` cells."""
    if len(cells) == 0:
        return []
    starts = np.flatnonzero(np.r_[True, cells[1:] != cells[:-1]])
    ends = np.r_[starts[1:], len(cells)]
    return [(int(starts[i]), int(ends[min(i + max_cells, len(starts)) - 1]))
            for i in range(0, len(starts), max_cells)]


def default_plan(order: int, d: int, shape: TileShape, symmetric: bool | None = None) -> TilePlan:
    if symmetric is None:
        symmetric = shape.Mt == shape.Nt
    return plan(support_size(order, d), shape, symmetric)


def assemble(particles: ParticleSet, grid: Grid, order: int,
             shape: TileShape = TileShape(8, 8, 4), policy: PrecisionPolicy = FP64,
             kind="scalar", *, chunk: int = DEFAULT_CHUNK, symmetric: bool | None = None,
             threads: int = 1) -> StencilMatrix:
    """
    Assemble the global mass matrix from cell-sorted particles.

    Parameters
    ----------
    particles : ParticleSet
        Must be sorted by linear cell index (see ``sort_by_cell``).
    grid : Grid
    order : int
        1 (CIC) or 2 (TSC).
    shape, policy :
        Tile shape and numeric model of the MMA engine.
    kind : "scalar" or "tensorial"
    chunk : int
        Maximum particles of a cell loaded per pass.
    symmetric : bool, optional
        Skip tiles below the diagonal. Defaults to True for square tiles.
    threads : int
        With more than one thread, cell blocks are assembled into private
        partial matrices that are summed in block order.

    Returns
    -------
    StencilMatrix in the policy's accumulate format, scaled by ``particles.sigma``.
    """
    kind = Kind(kind)
    grid.check_order(order)
    if chunk < 1:
        raise ValueError("chunk must be positive")
    tplan = default_plan(order, grid.ndim, shape, symmetric)
    d = grid.ndim
    G = n_groups(order, d)
    table = build_table(order, d, [group_base(order, d, g) for g in range(G)])
    store = StencilMatrix(grid, order, kind.n_components, dtype=policy.dtype)
    prep = _prepare(particles, grid, order, kind)
    if not is_sorted(prep.cell):
        raise UnsortedParticlesError("particles must be sorted by cell before assembly")

    per_cell = G * kind.n_components * len(tplan.tiles) * shape.Mt * shape.Nt * policy.dtype.itemsize
    blocks = _cell_blocks(prep.cell, max(1, _BLOCK_BYTES // per_cell))
    sigma = particles.sigma
    if threads <= 1 or len(blocks) <= 1:
        for lo, hi in blocks:
            _assemble_range(prep, lo, hi, grid, order, tplan, policy, table, sigma, chunk, store)
        return store

    # contiguous runs of blocks per worker, merged in order
    parts = np.array_split(np.arange(len(blocks)), min(threads, len(blocks)))

    def work(ids):
        partial = store.zeros_like()
        for i in ids:
            lo, hi = blocks[i]
            _assemble_range(prep, lo, hi, grid, order, tplan, policy, table, sigma, chunk, partial)
        return partial

    with cf.ThreadPoolExecutor(max_workers=threads) as pool:
        for partial in pool.map(work, parts):
            store += partial
    return store


def assemble_cell(positions, charges, grid: Grid, order: int,
                  shape: TileShape = TileShape(8, 8, 4), policy: PrecisionPolicy = FP64,
                  kind="scalar", omega=None, *, chunk: int = DEFAULT_CHUNK,
                  symmetric: bool | None = None) -> CellAccumulator:
    """
    Accumulators of a single cell, before scaling and deposition.

    All ``positions`` must fall in the same cell.
    """
    kind = Kind(kind)
    d = grid.ndim
    tplan = default_plan(order, d, shape, symmetric)
    out = CellAccumulator(plan=tplan, n_components=kind.n_components)
    ps = ParticleSet(np.asarray(positions, dtype=np.float64).reshape(-1, d), charges, omega)
    if len(ps) == 0:
        return out
    prep = _prepare(ps, grid, order, kind)
    if np.any(prep.cell != prep.cell[0]):
        raise ValueError("assemble_cell needs particles from a single cell")
    G = n_groups(order, d)
    lay = _layout(np.zeros(len(ps), dtype=np.int64), prep.gamma, G, shape.Kt, chunk)
    tiles = _accumulate(prep.w, prep.s, lay, tplan, policy)
    for g in np.flatnonzero(lay.n_batches):
        out.tiles[int(g)] = {rc: t[g] for rc, t in tiles.items()}
        out.bases[int(g)] = group_base(order, d, int(g))
        out.counts[int(g)] = int(np.sum(prep.gamma == g))
    return out
