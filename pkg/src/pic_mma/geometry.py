"""
Uniform periodic Cartesian grid, particle storage and cell sorting.

Node and cell indices are linearized row-major with axis 0 slowest, i.e.
for dims ``(nx, ny, nz)`` the cell ``(i, j, k)`` has linear index
``(i * ny + j) * nz + k``. The grid is node-centred and periodic, so there
are exactly as many nodes as cells along each axis and node ``i`` sits at
``i * dx``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """A position lies outside ``[0, dims * spacing)``."""


@dataclass(frozen=True)
class Grid:
    """
    Periodic uniform grid with ``d`` axes.

    Parameters
    ----------
    dims : sequence of int
        Cells (equivalently nodes) per axis, ``1 <= d <= 3``.
    spacing : sequence of float, optional
        Cell size per axis. Defaults to unit spacing.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...] = None  # type: ignore[assignment]

    def __post_init__(self):
        dims = tuple(int(n) for n in np.atleast_1d(self.dims))
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"grid must have 1 to 3 axes, got {len(dims)}")
        if any(n < 1 for n in dims):
            raise ValueError(f"cell counts must be positive, got {dims}")
        if self.spacing is None:
            spacing = (1.0,) * len(dims)
        else:
            spacing = tuple(float(h) for h in np.atleast_1d(self.spacing))
        if len(spacing) != len(dims):
            raise ValueError("spacing and dims must have the same length")
        if any(not h > 0 for h in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    # periodic node-centred grid: one node per cell
    n_nodes = n_cells

    @property
    def length(self) -> np.ndarray:
        return np.asarray(self.dims) * np.asarray(self.spacing)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def check_order(self, order: int) -> None:
        """Raise if a shape function of ``order`` would alias its own support."""
        if any(n < order + 1 for n in self.dims):
            raise ValueError(
                f"grid {self.dims} too small for order {order}: "
                f"need at least {order + 1} cells per axis")

    def linear_index(self, idx) -> np.ndarray:
        """Row-major linear index of (already wrapped) integer coordinates."""
        return np.ravel_multi_index(np.moveaxis(np.asarray(idx), -1, 0), self.dims)

    def unravel(self, linear) -> np.ndarray:
        """Inverse of :meth:`linear_index`; returns coordinates on the last axis."""
        return np.stack(np.unravel_index(np.asarray(linear), self.dims), axis=-1)


@dataclass
class CellLocation:
    """Containing cell and fractional in-cell coordinate, shape ``(..., d)``."""

    cell: np.ndarray
    frac: np.ndarray


def locate(grid: Grid, position) -> CellLocation:
    """
    Find the cell containing each position and the fractional coordinate.

    Accepts a single ``(d,)`` position or a ``(P, d)`` array. A node
    position maps to the cell on its upper side with ``frac == 0``.
    Positions outside the domain raise :class:`DomainError`.
    """
    x = np.asarray(position, dtype=np.float64)
    if x.shape[-1] != grid.ndim:
        raise ValueError(f"expected {grid.ndim}-vectors, got shape {x.shape}")
    length = grid.length
    if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x >= length):
        raise DomainError("position outside the periodic domain [0, L)")
    u = x / np.asarray(grid.spacing)
    cell = np.floor(u).astype(np.int64)
    frac = u - cell
    # x just below L can round to u == dims; that point is the periodic image of 0
    dims = np.asarray(grid.dims)
    wrapped = cell >= dims
    if np.any(wrapped):
        cell = np.where(wrapped, cell - dims, cell)
        frac = np.where(wrapped, 0.0, frac)
    return CellLocation(cell=cell, frac=frac)


def node_id(grid: Grid, cell, offset) -> np.ndarray:
    """Linear index of node ``(cell + offset) mod dims``."""
    idx = np.mod(np.asarray(cell) + np.asarray(offset), grid.dims)
    return grid.linear_index(idx)


@dataclass
class ParticleSet:
    """
    Particles of one species.

    ``positions`` has shape ``(P, d)``; ``charges`` ``(P,)``; ``omega`` is the
    ``(P, 3)`` dimensionless magnetization, only needed for tensorial runs.
    ``sigma`` collects all constant prefactors of the mass matrix.
    """

    positions: np.ndarray
    charges: np.ndarray
    omega: np.ndarray | None = None
    sigma: float = 1.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        self.charges = np.asarray(self.charges, dtype=np.float64).reshape(-1)
        if len(self.charges) != len(self.positions):
            raise ValueError("positions and charges disagree on particle count")
        if self.omega is not None:
            self.omega = np.asarray(self.omega, dtype=np.float64).reshape(-1, 3)
            if len(self.omega) != len(self.positions):
                raise ValueError("omega and positions disagree on particle count")

    def __len__(self) -> int:
        return len(self.charges)

    def take(self, index) -> "ParticleSet":
        return ParticleSet(
            positions=self.positions[index],
            charges=self.charges[index],
            omega=None if self.omega is None else self.omega[index],
            sigma=self.sigma,
        )


@dataclass
class CellRanges:
    """Contiguous ``[start, start + count)`` slice of sorted particles per cell."""

    start: np.ndarray
    count: np.ndarray
    cell_of: np.ndarray = field(repr=False)  # linear cell index per sorted particle

    def __len__(self) -> int:
        return len(self.start)

    def nonempty(self) -> np.ndarray:
        return np.flatnonzero(self.count)


def cell_indices(particles: ParticleSet, grid: Grid) -> np.ndarray:
    """Linear cell index of every particle."""
    if len(particles) == 0:
        return np.zeros(0, dtype=np.int64)
    return grid.linear_index(locate(grid, particles.positions).cell)


def sort_by_cell(particles: ParticleSet, grid: Grid) -> tuple[ParticleSet, CellRanges]:
    """
    Stable counting sort of particles by linear cell index.

    Returns the permuted particle set and the per-cell ranges over it.
    """
    cells = cell_indices(particles, grid)
    order = np.argsort(cells, kind="stable")
    count = np.bincount(cells, minlength=grid.n_cells).astype(np.int64)
    start = np.zeros_like(count)
    np.cumsum(count[:-1], out=start[1:])
    ranges = CellRanges(start=start, count=count, cell_of=cells[order])
    return particles.take(order), ranges


def is_sorted(cells: np.ndarray) -> bool:
    return bool(np.all(cells[1:] >= cells[:-1]))
