"""Quadratic BSDE engine: benchmark solve, transformed mean-field BSDE, reconstruction."""

from .driver import eval_J1, eval_J1_quadratic, eval_J2
from .notation import NotationPack, build_pack, pack_from_fields
from .regression import ExactOperator, FieldFit, RegressionOperator
from .solver import (BenchmarkSolution, BsdeSolution, CommonPaths, DensityPath, EquilibriumFields,
                     SolverConfig, ball_radius, common_paths, equilibrium_fields, girsanov_density,
                     notation_pack, picard_solve, reconstruct_equilibrium, solve_benchmark)
from .transform import forward_transform, invert_transform, recover_barY

__all__ = [
    "BenchmarkSolution", "BsdeSolution", "CommonPaths", "DensityPath", "EquilibriumFields",
    "ExactOperator", "FieldFit", "NotationPack", "RegressionOperator", "SolverConfig",
    "ball_radius", "build_pack", "common_paths", "equilibrium_fields", "eval_J1",
    "eval_J1_quadratic", "eval_J2", "forward_transform", "girsanov_density", "invert_transform",
    "notation_pack", "pack_from_fields", "picard_solve", "reconstruct_equilibrium",
    "recover_barY", "solve_benchmark",
]
