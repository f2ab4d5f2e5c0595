"""Workload kernels: functional results plus issue traces for the timing model."""

from .common import OperandError, PlanningError, Variant
from .stencil import STENCIL_SUITE, StencilSpec, box_stencil, j3d27pt, star_stencil, stencil
from .spmm import plan_spmm, spmm
from .spmspm import plan_spmspm, spmspm
from .micro import peak_fma, sparse_dot

__all__ = ["OperandError", "PlanningError", "Variant", "STENCIL_SUITE", "StencilSpec",
           "box_stencil", "j3d27pt", "star_stencil", "stencil", "plan_spmm", "spmm",
           "plan_spmspm", "spmspm", "peak_fma", "sparse_dot"]
