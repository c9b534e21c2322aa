"""Particle-in-cell mass-matrix assembly as batched matrix-multiply-accumulate tiles."""

from .assembler import UnsortedParticlesError, assemble, assemble_cell
from .geometry import DomainError, Grid, ParticleSet, locate, sort_by_cell
from .mma import FP64, PROFILES, TF32_FP32, PrecisionPolicy, TileShape, plan, profile
from .oracle import assemble_naive
from .response import Kind, alpha
from .stencil import StencilMatrix, canonical_offsets, frobenius_rel_diff, max_rel_diff

__version__ = "0.1.0"

__all__ = [
    "DomainError", "FP64", "Grid", "Kind", "PROFILES", "ParticleSet", "PrecisionPolicy",
    "StencilMatrix", "TF32_FP32", "TileShape", "UnsortedParticlesError", "alpha", "assemble",
    "assemble_cell", "assemble_naive", "canonical_offsets", "frobenius_rel_diff", "locate",
    "max_rel_diff", "plan", "profile", "sort_by_cell",
]
