"""
Software matrix-multiply-accumulate tiles.

A tile engine updates ``D <- D + A @ B`` for fixed ``(Mt, Nt, Kt)`` operand
shapes. Two numeric models are provided:

* ``fp64``: FP64 operands and accumulator.
* ``tf32``: operands rounded to TF32 (FP32 exponent, 10 explicit mantissa
  bits, round-to-nearest-even); products of two TF32 numbers carry at most
  22 significant bits and are therefore exact in FP32, so each step is an
  exact product followed by one correctly rounded accumulator add.

The contraction index is always summed in ascending order ``k = 0..Kt-1``,
one rank-1 update at a time, which makes every result bit-reproducible and
bit-identical to a plain triple loop with the same ``k`` order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Format(str, Enum):
    FP64 = "fp64"
    FP32 = "fp32"
    TF32 = "tf32"


# formats ordered by the set of values they can represent
_WIDTH = {Format.TF32: 0, Format.FP32: 1, Format.FP64: 2}
_INPUT_FORMATS = (Format.FP64, Format.TF32)
_ACC_FORMATS = (Format.FP64, Format.FP32)


@dataclass(frozen=True)
class TileShape:
    Mt: int
    Nt: int
    Kt: int

    def __post_init__(self):
        if min(self.Mt, self.Nt, self.Kt) < 1:
            raise ValueError(f"tile dimensions must be positive: {self}")

    def __str__(self) -> str:
        return f"{self.Mt}x{self.Nt}x{self.Kt}"


@dataclass(frozen=True)
class PrecisionPolicy:
    input_format: Format = Format.FP64
    accumulate_format: Format = Format.FP64

    def __post_init__(self):
        fin, facc = Format(self.input_format), Format(self.accumulate_format)
        if fin not in _INPUT_FORMATS:
            raise ValueError(f"unsupported input format {fin.value}")
        if facc not in _ACC_FORMATS:
            raise ValueError(f"unsupported accumulate format {facc.value}")
        if _WIDTH[facc] < _WIDTH[fin]:
            raise ValueError(
                f"accumulate format {facc.value} narrower than input {fin.value}")
        object.__setattr__(self, "input_format", fin)
        object.__setattr__(self, "accumulate_format", facc)

    @property
    def dtype(self) -> np.dtype:
        """Accumulator dtype."""
        return np.dtype(np.float64 if self.accumulate_format is Format.FP64 else np.float32)

    def cast_input(self, x) -> np.ndarray:
        """Round operands to the input format, stored in the accumulator dtype."""
        if self.input_format is Format.TF32:
            return truncate_tf32(x).astype(self.dtype, copy=False)
        return np.asarray(x, dtype=np.float64)


FP64 = PrecisionPolicy(Format.FP64, Format.FP64)
TF32_FP32 = PrecisionPolicy(Format.TF32, Format.FP32)

# named tile profiles
PROFILES: dict[str, tuple[TileShape, PrecisionPolicy]] = {
    "fp64-8x8x4": (TileShape(8, 8, 4), FP64),
    "tf32-16x16x8": (TileShape(16, 16, 8), TF32_FP32),
}


def profile(name: str) -> tuple[TileShape, PrecisionPolicy]:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def truncate_tf32(x) -> np.ndarray:
    """
    Round FP32 values to TF32, keeping the FP32 exponent range.

    The input is first converted to FP32. Non-finite values pass through.
    """
    x32 = np.asarray(x, dtype=np.float32)
    bits = x32.view(np.uint32)
    lsb = (bits >> np.uint32(13)) & np.uint32(1)
    rounded = (bits + np.uint32(0x0FFF) + lsb) & np.uint32(0xFFFFE000)
    out = np.where(np.isfinite(x32), rounded.view(np.float32), x32)
    return out[()] if out.ndim == 0 else out


def mma_batched(D: np.ndarray, A, B, policy: PrecisionPolicy = FP64) -> np.ndarray:
    """
    In-place ``D[...] += A[...] @ B[...]`` over any leading batch axes.

    ``D`` must already be in the policy's accumulator dtype; ``A`` and ``B``
    are rounded to the input format here.
    """
    if D.dtype != policy.dtype:
        raise TypeError(f"accumulator dtype {D.dtype} does not match policy {policy.dtype}")
    return mma_prerounded(D, policy.cast_input(A), policy.cast_input(B))


def mma_prerounded(D: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``D += A @ B`` as ascending rank-1 updates; operands already in input format."""
    if A.shape[-2] != D.shape[-2] or B.shape[-1] != D.shape[-1] or A.shape[-1] != B.shape[-2]:
        raise ValueError(f"operand shapes {A.shape} @ {B.shape} do not fit {D.shape}")
    tmp = np.empty(np.broadcast_shapes(D.shape, A.shape[:-1] + (1,), B.shape[:-2] + (1, B.shape[-1])),
                   dtype=np.result_type(A, B))
    for k in range(A.shape[-1]):
        np.multiply(A[..., :, k, None], B[..., None, k, :], out=tmp)
        np.add(D, tmp, out=D)
    return D


def mma(D: np.ndarray, A, B, policy: PrecisionPolicy = FP64, shape: TileShape | None = None):
    """
    One tile update ``D <- D + A B``.

    Without ``shape`` the tile shape is taken from ``A`` and ``B``; with it,
    operands of any other shape are rejected.
    """
    D = np.asarray(D)
    A = np.asarray(A)
    B = np.asarray(B)
    if shape is None:
        shape = TileShape(A.shape[0], B.shape[1], A.shape[1])
    expect = ((shape.Mt, shape.Nt), (shape.Mt, shape.Kt), (shape.Kt, shape.Nt))
    if (D.shape, A.shape, B.shape) != expect:
        raise ValueError(
            f"tile shape {shape} expects D{expect[0]} A{expect[1]} B{expect[2]}, "
            f"got D{D.shape} A{A.shape} B{B.shape}")
    if D.dtype != policy.dtype:
        D = D.astype(policy.dtype)
    return mma_batched(D, A, B, policy)


@dataclass(frozen=True)
class TilePlan:
    """
    Tiles covering the ``N x N`` cell accumulator.

    ``n_pad`` is the padded row count, ``n_pad_cols`` the padded column count
    (equal for square tiles). ``tiles`` lists ``(row, col)`` tile coordinates.
    """

    n: int
    shape: TileShape
    n_pad: int
    n_pad_cols: int
    tiles: tuple[tuple[int, int], ...]
    symmetric: bool

    @property
    def tile_rows(self) -> int:
        return self.n_pad // self.shape.Mt

    @property
    def tile_cols(self) -> int:
        return self.n_pad_cols // self.shape.Nt

    def tile_of(self, a, b):
        """Tile coordinates and in-tile position of accumulator entry ``(a, b)``."""
        a = np.asarray(a)
        b = np.asarray(b)
        return (a // self.shape.Mt, b // self.shape.Nt,
                a % self.shape.Mt, b % self.shape.Nt)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def plan(n: int, shape: TileShape, symmetric: bool = False) -> TilePlan:
    """
    Cover an ``n x n`` accumulator with ``shape`` tiles.

    Symmetric plans keep only tiles on or above the diagonal, which is
    enough to hold every entry ``(a, b)`` with ``a <= b``.
    """
    if n < 1:
        raise ValueError("accumulator size must be positive")
    if symmetric and shape.Mt != shape.Nt:
        raise ValueError("symmetric tile plans need square tiles (Mt == Nt)")
    rows = _ceil_div(n, shape.Mt)
    cols = _ceil_div(n, shape.Nt)
    tiles = tuple((r, c) for r in range(rows) for c in range(cols)
                  if not symmetric or c >= r)
    return TilePlan(n=n, shape=shape, n_pad=rows * shape.Mt,
                    n_pad_cols=cols * shape.Nt, tiles=tiles, symmetric=symmetric)
