"""Per-particle coefficient tensors of the mass matrix."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Kind(str, Enum):
    SCALAR = "scalar"
    TENSORIAL = "tensorial"

    @property
    def n_components(self) -> int:
        return 1 if self is Kind.SCALAR else 9


# tensorial components are stored row-major: index 3*i + j
COMPONENTS = [(i, j) for i in range(3) for j in range(3)]


def component_index(i: int, j: int) -> int:
    return 3 * i + j


def cross_matrix(omega) -> np.ndarray:
    """Skew matrix ``C`` with ``C @ u == cross(omega, u)``; shape ``(..., 3, 3)``."""
    w = np.asarray(omega, dtype=np.float64)
    z = np.zeros(w.shape[:-1])
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    return np.stack([
        np.stack([z, -wz, wy], axis=-1),
        np.stack([wz, z, -wx], axis=-1),
        np.stack([-wy, wx, z], axis=-1),
    ], axis=-2)


def alpha(omega) -> np.ndarray:
    """
    Rotation-response tensor ``(I - C(w) + w w^T) / (1 + |w|^2)``.

    Vectorized over leading axes of ``omega``.
    """
    w = np.asarray(omega, dtype=np.float64)
    if w.shape[-1] != 3:
        raise ValueError("omega must be a 3-vector")
    outer = w[..., :, None] * w[..., None, :]
    num = np.eye(3) - cross_matrix(w) + outer
    return num / (1.0 + np.sum(w * w, axis=-1))[..., None, None]


@dataclass
class CoefficientTensor:
    """Coefficient of one particle: 1 value (scalar) or 9 values row-major."""

    kind: Kind
    values: np.ndarray

    def matrix(self) -> np.ndarray:
        if self.kind is Kind.SCALAR:
            return self.values[0] * np.eye(3)
        return self.values.reshape(3, 3)


def coefficient(kind, q: float, omega=None) -> CoefficientTensor:
    kind = Kind(kind)
    if kind is Kind.SCALAR:
        return CoefficientTensor(kind, np.array([float(q)]))
    if omega is None:
        raise ValueError("tensorial coefficients need omega")
    return CoefficientTensor(kind, (float(q) * alpha(omega)).reshape(9))


def coefficients(kind, charges, omega=None) -> np.ndarray:
    """Coefficients of many particles, shape ``(P, n_components)``."""
    kind = Kind(kind)
    q = np.asarray(charges, dtype=np.float64).reshape(-1)
    if kind is Kind.SCALAR:
        return q[:, None].copy()
    if omega is None:
        raise ValueError("tensorial coefficients need omega")
    a = alpha(np.asarray(omega, dtype=np.float64).reshape(-1, 3))
    return (q[:, None, None] * a).reshape(len(q), 9)


@dataclass(frozen=True)
class SpeciesParams:
    """Species constants; ``beta = q dt / (2 m)``."""

    q: float
    m: float
    dt: float
    c: float = 1.0

    @property
    def beta(self) -> float:
        return self.q * self.dt / (2.0 * self.m)

    def sigma(self, cell_volume: float) -> float:
        """Constant prefactor ``beta / (c V)`` of the mass matrix."""
        return self.beta / (self.c * cell_volume)

    def omega(self, b_field) -> np.ndarray:
        """Magnetization ``beta B / c`` from a field sampled at the particles."""
        return self.beta * np.asarray(b_field, dtype=np.float64) / self.c
