"""
Sparse mass-matrix storage indexed by canonical stencil offsets.

Each component of the mass matrix is symmetric under exchange of the two
nodes, so only offsets ``delta`` whose first nonzero entry (axis 0 first)
is positive, plus ``delta == 0``, are stored. ``values[g, k, c]`` holds
component ``c`` of the entry between node ``g`` (the anchor) and node
``g + offsets[k]`` (wrapped periodically).

For order ``n`` the offsets span ``{-n..n}**d``, so ``((2n+1)**d + 1) // 2``
of them are canonical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .geometry import Grid, node_id
from .shape import node_offsets

DENSE_LIMIT = 4096


def is_canonical(delta) -> bool:
    nz = np.flatnonzero(np.asarray(delta))
    return nz.size == 0 or np.asarray(delta)[nz[0]] > 0


def canonical(delta, order: int) -> tuple[tuple[int, ...], bool]:
    """
    Map an offset to the stored half.

    Returns ``(delta, False)`` when ``delta`` is canonical, otherwise
    ``(-delta, True)``.
    """
    delta = np.asarray(delta, dtype=np.int64).reshape(-1)
    if np.any(np.abs(delta) > 2 * order):
        raise ValueError(f"offset {tuple(delta)} outside [-{2 * order}, {2 * order}]")
    if is_canonical(delta):
        return tuple(int(v) for v in delta), False
    return tuple(int(-v) for v in delta), True


@lru_cache(maxsize=None)
def canonical_offsets(order: int, d: int) -> np.ndarray:
    """Canonical offsets in ``{-n..n}**d``, lexicographic, shape ``(K, d)``."""
    rng = range(-order, order + 1)
    out = np.array([dl for dl in product(rng, repeat=d) if is_canonical(dl)],
                   dtype=np.int64).reshape(-1, d)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _offset_lookup(order: int, d: int) -> np.ndarray:
    """Dense table from ``delta + n`` (base ``2n+1`` digits) to offset index, -1 if absent."""
    w = 2 * order + 1
    table = np.full(w ** d, -1, dtype=np.int64)
    offs = canonical_offsets(order, d)
    table[_digits(offs, order)] = np.arange(len(offs))
    table.setflags(write=False)
    return table


def _digits(delta: np.ndarray, order: int) -> np.ndarray:
    w = 2 * order + 1
    shifted = np.asarray(delta) + order
    key = np.zeros(shifted.shape[:-1], dtype=np.int64)
    for mu in range(shifted.shape[-1]):
        key = key * w + shifted[..., mu]
    return key


def offset_index(order: int, delta) -> np.ndarray:
    """Storage index of canonical offsets ``delta`` (``(..., d)``)."""
    delta = np.asarray(delta, dtype=np.int64)
    idx = _offset_lookup(order, delta.shape[-1])[_digits(delta, order)]
    if np.any(idx < 0):
        raise ValueError("non-canonical offset has no storage slot")
    return idx


@dataclass(frozen=True)
class DepositTable:
    """
    Map from local accumulator entries ``(a, b)``, ``a <= b``, to storage.

    ``anchor[gamma, m]`` is the offset of the anchor node from the cell
    index for pair ``m`` in support group ``gamma``; ``offset[m]`` is the
    canonical offset index. With lexicographic node order every ``a <= b``
    pair is already canonical, so ``transposed`` is all False for tables
    built here; the field is kept so callers need not rely on that.
    """

    order: int
    d: int
    a: np.ndarray
    b: np.ndarray
    anchor: np.ndarray
    offset: np.ndarray
    transposed: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.a)


def build_table(order: int, d: int, bases) -> DepositTable:
    """
    Deposit table for support groups with the given base offsets.

    ``bases`` has shape ``(G, d)``; row ``gamma`` is the base of group ``gamma``.
    """
    bases = np.asarray(bases, dtype=np.int64).reshape(-1, d)
    offs = node_offsets(order, d)
    a, b = np.triu_indices(len(offs))
    delta = offs[b] - offs[a]
    flips = np.array([not is_canonical(dl) for dl in delta], dtype=bool)
    delta = np.where(flips[:, None], -delta, delta)
    first = np.where(flips[:, None], offs[b], offs[a])
    anchor = bases[:, None, :] + first[None, :, :]
    return DepositTable(order=order, d=d, a=a, b=b, anchor=anchor,
                        offset=offset_index(order, delta), transposed=flips)


class StencilMatrix:
    """
    Global mass matrix in canonical-offset storage.

    Parameters
    ----------
    grid : Grid
    order : int
        Shape-function order; fixes the offset range.
    n_components : int
        1 for scalar, 9 for tensorial (row-major ``(i, j)``).
    dtype : numpy dtype
        Storage (accumulate) format.
    """

    def __init__(self, grid: Grid, order: int, n_components: int = 1, dtype=np.float64,
                 values: np.ndarray | None = None):
        self.grid = grid
        self.order = order
        self.n_components = n_components
        self.offsets = canonical_offsets(order, grid.ndim)
        shape = (grid.n_nodes, len(self.offsets), n_components)
        if values is None:
            values = np.zeros(shape, dtype=dtype)
        elif values.shape != shape:
            raise ValueError(f"values shape {values.shape} != {shape}")
        self.values = values

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def copy(self) -> "StencilMatrix":
        return StencilMatrix(self.grid, self.order, self.n_components, values=self.values.copy())

    def zeros_like(self) -> "StencilMatrix":
        return StencilMatrix(self.grid, self.order, self.n_components, dtype=self.dtype)

    def __iadd__(self, other: "StencilMatrix") -> "StencilMatrix":
        self.values += other.values
        return self

    def add_at(self, node, offset, values) -> None:
        """
        Scatter-add ``values[m, c]`` into ``(node[m], offset[m], c)``.

        Duplicates accumulate in ``m`` order, in the storage dtype.
        """
        k = len(self.offsets)
        nc = self.n_components
        flat = (np.asarray(node, dtype=np.int64) * k + np.asarray(offset, dtype=np.int64))
        flat = (flat[:, None] * nc + np.arange(nc)).reshape(-1)
        np.add.at(self.values.reshape(-1), flat,
                  np.asarray(values, dtype=self.dtype).reshape(-1))

    # ------------------------------------------------------------------
    # queries

    def lookup(self, g: int, g2: int, component: int = 0) -> float:
        """
        Entry ``M[g, g2]`` of one component.

        Sums every stored image of the node pair, so grids smaller than
        ``2n + 1`` cells per axis (where ``+delta`` and ``-delta`` can reach
        the same node) are resolved correctly. Returns 0 outside the stencil.
        """
        grid, n = self.grid, self.order
        c1 = grid.unravel(g)
        c2 = grid.unravel(g2)
        diff = np.mod(c2 - c1, grid.dims)
        per_axis = []
        for mu, L in enumerate(grid.dims):
            cands = [w for w in range(-n, n + 1) if (w - diff[mu]) % L == 0]
            if not cands:
                return 0.0
            per_axis.append(cands)
        slots = []
        for delta in product(*per_axis):
            cdelta, flipped = canonical(delta, n)
            anchor = g2 if flipped else g
            slots.append((anchor, int(offset_index(n, np.array(cdelta)))))
        # (g, g') and (g', g) reach the same slots; summing them sorted keeps
        # the two lookups bit-identical
        total = 0.0
        for anchor, k in sorted(slots):
            total += float(self.values[anchor, k, component])
        return total

    def entries(self):
        """``(row, col)`` node indices of every stored slot, shape ``(N_g, K)`` each."""
        nodes = np.arange(self.grid.n_nodes)
        cells = self.grid.unravel(nodes)
        cols = node_id(self.grid, cells[:, None, :], self.offsets[None, :, :])
        rows = np.broadcast_to(nodes[:, None], cols.shape)
        return rows, cols

    def to_dense(self) -> np.ndarray:
        """Dense ``(n_components, N_g, N_g)`` matrix, symmetric per component."""
        ng = self.grid.n_nodes
        if ng > DENSE_LIMIT:
            raise ValueError(f"dense reconstruction limited to {DENSE_LIMIT} nodes, grid has {ng}")
        dense = np.zeros((self.n_components, ng, ng), dtype=self.dtype)
        rows, cols = self.entries()
        offdiag = np.any(self.offsets != 0, axis=1)
        for c in range(self.n_components):
            v = self.values[:, :, c]
            np.add.at(dense[c], (rows.ravel(), cols.ravel()), v.ravel())
            np.add.at(dense[c], (cols[:, offdiag].ravel(), rows[:, offdiag].ravel()),
                      v[:, offdiag].ravel())
        return dense

    def component_sums(self) -> np.ndarray:
        """Sum over all ``(g, g')`` of each component of the full matrix."""
        mult = np.where(np.any(self.offsets != 0, axis=1), 2.0, 1.0)
        return np.einsum("gkc,k->c", self.values.astype(np.float64), mult)

    def frobenius(self) -> float:
        """Frobenius norm of the full matrix over all components."""
        mult = np.where(np.any(self.offsets != 0, axis=1), 2.0, 1.0)
        v = self.values.astype(np.float64)
        return float(np.sqrt(np.einsum("gkc,k->", v * v, mult)))

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict:
        return {
            "dims": list(self.grid.dims),
            "spacing": list(self.grid.spacing),
            "order": self.order,
            "components": self.n_components,
            "dtype": self.dtype.name,
            "offsets": self.offsets.tolist(),
            "values": self.values.tolist(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "StencilMatrix":
        grid = Grid(tuple(data["dims"]), tuple(data["spacing"]))
        out = cls(grid, int(data["order"]), int(data["components"]),
                  dtype=np.dtype(data.get("dtype", "float64")))
        if np.asarray(data["offsets"]).tolist() != out.offsets.tolist():
            raise ValueError("offset table does not match this order and dimension")
        out.values[...] = np.asarray(data["values"], dtype=out.dtype)
        return out

    @classmethod
    def from_json(cls, text: str) -> "StencilMatrix":
        return cls.from_dict(json.loads(text))


def deposit(store: StencilMatrix, cell, block, table: DepositTable, sigma: float = 1.0,
            group: int = 0) -> StencilMatrix:
    """
    Add ``sigma * block`` of one cell's support group into ``store``.

    ``block`` has shape ``(n_components, >=N, >=N)``; only entries
    ``a <= b < N`` are read, so padding rows and columns are ignored.
    """
    block = np.asarray(block)
    if block.ndim == 2:
        block = block[None]
    vals = block[:, table.a, table.b].T
    nodes = node_id(store.grid, np.asarray(cell)[None, :], table.anchor[group])
    store.add_at(nodes, table.offset, store.dtype.type(sigma) * vals.astype(store.dtype))
    return store


def max_rel_diff(test: StencilMatrix, ref: StencilMatrix) -> float:
    """
    Largest entry difference relative to the largest reference entry.

    Normalized per component; each tensor component has its own scale.
    """
    a = test.values.astype(np.float64)
    b = ref.values.astype(np.float64)
    scale = np.max(np.abs(b), axis=(0, 1))
    err = np.max(np.abs(a - b), axis=(0, 1))
    rel = np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), np.where(err > 0, np.inf, 0.0))
    return float(np.max(rel)) if rel.size else 0.0


def frobenius_rel_diff(test: StencilMatrix, ref: StencilMatrix) -> float:
    diff = StencilMatrix(ref.grid, ref.order, ref.n_components,
                         values=test.values.astype(np.float64) - ref.values.astype(np.float64))
    norm = ref.frobenius()
    return diff.frobenius() / norm if norm > 0 else diff.frobenius()
