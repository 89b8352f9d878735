"""Distributed-boundary optimal control of the heat equation at desk scale.

A P1 finite-element / implicit-Euler solver stack for simultaneously
controlling the internal energy and the boundary heat flux of a heat
conduction problem, with either a pinned (Dirichlet) or a Robin exchange
condition on the remaining boundary portion, plus the machinery to study
the Robin-to-pinned limit and the fixed-point characterization of optima.
"""

from .adjoint import solve_adjoint, solve_adjoint_P, solve_adjoint_Palpha
from .analysis import (SweepRecord, SweepReport, fixed_control_sweep,
                       optimal_control_sweep, section5_checks, sweep_flags)
from .assembly import (AssemblyError, ConstantsReport, DiscreteOperators,
                       assemble, compute_constants)
from .control import (OptimalityReport, apply_C, apply_W, contraction_constant,
                      convexity_gap, cost_J, gradient_J, h_inner, hq_inner,
                      hq_norm, measured_step_ratio, q_inner, solve_cg,
                      solve_distributed_only, solve_fixed_point)
from .linalg import EigenError, SolverError, SpdFactor, gen_eig_extreme, spd_solve
from .mesh import Mesh, TimeGrid, build_rect_mesh, dof_partition
from .state import (ControlPair, ProblemData, Stepper, Trajectory,
                    solve_state, solve_state_P, solve_state_Palpha)

__all__ = [
    "AssemblyError",
    "ConstantsReport",
    "ControlPair",
    "DiscreteOperators",
    "EigenError",
    "Mesh",
    "OptimalityReport",
    "ProblemData",
    "SolverError",
    "SpdFactor",
    "Stepper",
    "SweepRecord",
    "SweepReport",
    "TimeGrid",
    "Trajectory",
    "apply_C",
    "apply_W",
    "assemble",
    "build_rect_mesh",
    "compute_constants",
    "contraction_constant",
    "convexity_gap",
    "cost_J",
    "dof_partition",
    "fixed_control_sweep",
    "gen_eig_extreme",
    "gradient_J",
    "h_inner",
    "hq_inner",
    "hq_norm",
    "measured_step_ratio",
    "optimal_control_sweep",
    "q_inner",
    "section5_checks",
    "solve_adjoint",
    "solve_adjoint_P",
    "solve_adjoint_Palpha",
    "solve_cg",
    "solve_distributed_only",
    "solve_fixed_point",
    "solve_state",
    "solve_state_P",
    "solve_state_Palpha",
    "spd_solve",
    "sweep_flags",
]
