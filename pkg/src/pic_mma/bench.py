"""
Benchmark harness: synthetic particles, timing of tiled against naive
assembly, error metrics and invariant checks.

Particle sets are drawn from numpy's ``Philox`` counter-based bit generator
seeded with ``RunConfig.seed``. The stream layout is documented in
:func:`synth` so other implementations can regenerate identical inputs.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assembler import assemble, assemble_cell
from .geometry import Grid, ParticleSet, locate, sort_by_cell
from .mma import Format, profile
from .oracle import assemble_naive
from .response import Kind, coefficients
from .shape import weights
from .stencil import StencilMatrix, frobenius_rel_diff, max_rel_diff

DEFAULT_PROFILE = {1: "fp64-8x8x4", 2: "tf32-16x16x8"}
DISTRIBUTIONS = ("uniform", "clustered")
# fraction of clustered particles confined to the lower-corner subcell
CLUSTER_FRACTION = 0.75
CSV_HEADER = ["axis", "naive_ms", "tiled_ms", "speedup", "max_rel_err", "checks_passed"]

_SAMPLE = 1000


@dataclass(frozen=True)
class RunConfig:
    dims: tuple[int, ...] = (16, 16, 16)
    order: int = 1
    kind: str = "scalar"
    ppc: int = 16
    profile: str | None = None
    seed: int = 0
    repeats: int = 1
    threads: int = 1
    distribution: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "kind", Kind(self.kind).value)
        if self.profile is None:
            object.__setattr__(self, "profile", DEFAULT_PROFILE.get(self.order, "fp64-8x8x4"))
        profile(self.profile)
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        if self.ppc < 0:
            raise ValueError("ppc must be non-negative")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")

    @property
    def grid(self) -> Grid:
        return Grid(self.dims)

    def with_(self, **changes) -> "RunConfig":
        return RunConfig(**{**asdict(self), **changes})


@dataclass
class RunReport:
    config: RunConfig
    n_particles: int
    sort_ms: float
    naive_ms: list[float]
    tiled_ms: list[float]
    naive_arithmetic: str
    max_rel_err: float | None
    frobenius_rel_err: float | None
    checks: dict[str, bool] = field(default_factory=dict)
    speedup: float | None = None
    error: str | None = None

    @property
    def checks_passed(self) -> bool:
        return self.error is None and bool(self.checks) and all(self.checks.values())

    @staticmethod
    def _summary(samples: list[float]) -> dict:
        if not samples:
            return {"samples": [], "min": None, "median": None}
        return {"samples": samples, "min": min(samples), "median": float(np.median(samples))}

    @property
    def naive_median(self) -> float | None:
        return self._summary(self.naive_ms)["median"]

    @property
    def tiled_median(self) -> float | None:
        return self._summary(self.tiled_ms)["median"]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_particles": self.n_particles,
            "sort_ms": self.sort_ms,
            "naive_arithmetic": self.naive_arithmetic,
            "timings_ms": {"naive": self._summary(self.naive_ms),
                           "tiled": self._summary(self.tiled_ms)},
            "speedup": self.speedup,
            "errors": {"max_rel": self.max_rel_err, "frobenius_rel": self.frobenius_rel_err},
            "checks": dict(self.checks),
            "checks_passed": self.checks_passed,
            "error": self.error,
        }


# ----------------------------------------------------------------------
# particle synthesis


def synth(config: RunConfig) -> ParticleSet:
    """
    Exactly ``ppc`` particles in every cell, ordered by linear cell index.

    Stream layout (one ``Generator(Philox(seed))``):

    1. fractional positions, ``random((n_cells * ppc, d))``;
    2. clustered only: ``random(n_cells * ppc)``; draws below
       ``CLUSTER_FRACTION`` halve the fractions, moving the particle into
       the lower-corner subcell ``[0, 1/2)**d``;
    3. charges, ``uniform(0.5, 1.5, n_cells * ppc)``;
    4. tensorial only: ``omega = uniform(-1, 1, (n_cells * ppc, 3))``.
    """
    grid = config.grid
    d = grid.ndim
    n_cells = grid.n_cells
    P = n_cells * config.ppc
    rng = np.random.Generator(np.random.Philox(config.seed))
    frac = rng.random((P, d))
    if config.distribution == "clustered":
        frac = np.where((rng.random(P) < CLUSTER_FRACTION)[:, None], 0.5 * frac, frac)
    charges = rng.uniform(0.5, 1.5, P)
    omega = rng.uniform(-1.0, 1.0, (P, 3)) if Kind(config.kind) is Kind.TENSORIAL else None

    cells = grid.unravel(np.repeat(np.arange(n_cells), config.ppc)).reshape(P, d)
    h = np.asarray(grid.spacing)
    pos = (cells + frac) * h
    # fractions within an ulp of 1 can round into the next cell; recentre those
    bad = np.any(np.floor(pos / h) != cells, axis=1) | np.any(pos >= np.asarray(grid.length), axis=1)
    pos[bad] = (cells[bad] + 0.5) * h
    return ParticleSet(pos, charges, omega)


# ----------------------------------------------------------------------
# invariant checks


def _tolerance(policy) -> float:
    """Relative tolerance of invariants that hold exactly in real arithmetic."""
    if policy.input_format is Format.TF32:
        return 2.0 ** -10
    return 1e-12


def check_partition_of_unity(particles: ParticleSet, grid: Grid, order: int,
                             rng: np.random.Generator) -> bool:
    """Weights of a particle sample are non-negative and sum to one."""
    if len(particles) == 0:
        return True
    idx = np.sort(rng.choice(len(particles), size=min(_SAMPLE, len(particles)), replace=False))
    w = weights(order, locate(grid, particles.positions[idx])).weights
    return bool(np.all(w >= 0) and np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-14))


def check_symmetry(store: StencilMatrix, particles: ParticleSet, config: RunConfig,
                   rng: np.random.Generator) -> bool:
    """
    Node-exchange symmetry.

    On sampled node pairs the store answers identically for ``(g, g')`` and
    ``(g', g)``; on a sampled cell the unreduced tile accumulator (no
    triangle skipping) is symmetric to the precision of the input format.
    """
    grid = store.grid
    rows, cols = store.entries()
    k = rng.integers(0, rows.size, size=min(64, rows.size))
    for flat in k:
        g, g2 = int(rows.flat[flat]), int(cols.flat[flat])
        for c in range(store.n_components):
            if store.lookup(g, g2, c) != store.lookup(g2, g, c):
                return False
    if len(particles) == 0:
        return True
    shape, policy = profile(config.profile)
    cell = int(rng.integers(0, grid.n_cells))
    sel = slice(cell * config.ppc, (cell + 1) * config.ppc)
    sub = particles.take(sel)
    if len(sub) == 0:
        return True
    acc = assemble_cell(sub.positions, sub.charges, grid, config.order, shape, policy,
                        config.kind, sub.omega, symmetric=False)
    tol = _tolerance(policy)
    for gamma in acc.tiles:
        blk = acc.block(gamma).astype(np.float64)
        scale = np.max(np.abs(blk))
        if np.max(np.abs(blk - np.swapaxes(blk, -1, -2))) > tol * max(scale, np.finfo(float).tiny):
            return False
    return True


def check_conservation(store: StencilMatrix, particles: ParticleSet, kind: str, tol: float) -> bool:
    """Sum of every component equals ``sigma * sum_p s_p``."""
    s = particles.sigma * coefficients(kind, particles.charges, particles.omega)
    expect = s.sum(axis=0)
    scale = np.abs(s).sum(axis=0)
    got = store.component_sums()
    return bool(np.all(np.abs(got - expect) <= tol * np.maximum(scale, np.finfo(float).tiny)))


# ----------------------------------------------------------------------
# runs


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1e3


def run(config: RunConfig) -> RunReport:
    """
    Time naive and tiled assembly on identical inputs and verify the result.

    The naive baseline uses FP32 arithmetic when the profile accumulates in
    FP32 and FP64 otherwise. Errors are measured against an FP64 oracle over
    every stored entry. ``speedup`` (median naive / median tiled) is withheld
    when any invariant check fails.
    """
    grid = config.grid
    grid.check_order(config.order)
    shape, policy = profile(config.profile)
    particles = synth(config)

    t0 = time.perf_counter()
    particles, _ = sort_by_cell(particles, grid)
    sort_ms = _ms(t0)

    arithmetic = "fp64" if policy.accumulate_format is Format.FP64 else "fp32"
    naive_ms, tiled_ms = [], []
    naive = tiled = None
    for _ in range(config.repeats):
        t0 = time.perf_counter()
        naive = assemble_naive(particles, grid, config.order, config.kind, arithmetic=arithmetic)
        naive_ms.append(_ms(t0))
        t0 = time.perf_counter()
        tiled = assemble(particles, grid, config.order, shape, policy, config.kind,
                         threads=config.threads)
        tiled_ms.append(_ms(t0))

    ref = naive if arithmetic == "fp64" else assemble_naive(particles, grid, config.order,
                                                            config.kind)
    rng = np.random.Generator(np.random.Philox(config.seed + 1))
    checks = {
        "partition_of_unity": check_partition_of_unity(particles, grid, config.order, rng),
        "symmetry": check_symmetry(tiled, particles, config, rng),
        "conservation": check_conservation(tiled, particles, config.kind, _tolerance(policy)),
    }
    report = RunReport(
        config=config, n_particles=len(particles), sort_ms=sort_ms,
        naive_ms=naive_ms, tiled_ms=tiled_ms, naive_arithmetic=arithmetic,
        max_rel_err=max_rel_diff(tiled, ref), frobenius_rel_err=frobenius_rel_diff(tiled, ref),
        checks=checks,
    )
    if report.checks_passed:
        report.speedup = float(np.median(naive_ms) / max(np.median(tiled_ms), 1e-9))
    return report


def _failed(config: RunConfig, exc: Exception) -> RunReport:
    return RunReport(config=config, n_particles=0, sort_ms=0.0, naive_ms=[], tiled_ms=[],
                     naive_arithmetic="", max_rel_err=None, frobenius_rel_err=None,
                     error=f"{type(exc).__name__}: {exc}")


def sweep(base: RunConfig, axis: str, values) -> list[RunReport]:
    """
    One run per axis value.

    ``axis`` is ``"ppc"`` (values are ints) or ``"grid"`` (values are dims
    tuples). A point that raises is recorded as a failed report and the
    sweep continues.
    """
    if axis not in ("ppc", "grid"):
        raise ValueError(f"axis must be 'ppc' or 'grid', got {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep axis is empty")
    out = []
    for v in values:
        key = "ppc" if axis == "ppc" else "dims"
        try:
            cfg = base.with_(**{key: v})
        except Exception as exc:        # invalid point: keep the base config for the record
            out.append(_failed(base, exc))
            continue
        try:
            out.append(run(cfg))
        except Exception as exc:
            out.append(_failed(cfg, exc))
    return out


# ----------------------------------------------------------------------
# output


def axis_label(report: RunReport, axis: str) -> str:
    if axis == "ppc":
        return str(report.config.ppc)
    return "x".join(str(n) for n in report.config.dims)


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def csv_rows(reports: list[RunReport], axis: str) -> list[list[str]]:
    return [[axis_label(r, axis), _num(r.naive_median), _num(r.tiled_median),
             _num(r.speedup), _num(r.max_rel_err), str(r.checks_passed).lower()]
            for r in reports]


def write_outputs(reports: list[RunReport], axis: str, out_dir) -> tuple[Path, Path]:
    """Write ``report.json`` and ``sweep.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / "report.json"
    cpath = out_dir / "sweep.csv"
    doc = {"axis": axis, "runs": [r.to_dict() for r in reports]}
    jpath.write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")
    with cpath.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_HEADER)
        wr.writerows(csv_rows(reports, axis))
    return jpath, cpath


def read_csv(path) -> list[dict]:
    """Parse ``sweep.csv`` back into typed rows (empty cells become None)."""
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"axis": rec["axis"], "checks_passed": rec["checks_passed"] == "true"}
            for key in ("naive_ms", "tiled_ms", "speedup", "max_rel_err"):
                row[key] = float(rec[key]) if rec[key] else None
            rows.append(row)
    return rows

