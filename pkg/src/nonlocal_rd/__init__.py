"""Reaction-diffusion systems with nonlocal, local and mixed diffusion on rectangles."""
from .diagnostics import DiagnosticsRecord, ThetaWeights, choose_theta, dissipation_Y, lp_energy, weighted_mass
from .experiments import ConvergenceTable, fit_convergence_order, run_difflimit_study, run_side_by_side
from .grid import Field, Grid, build_grid, integrate_field
from .integrate import SolverConfig, SystemSpec, Trajectory, run, stable_dt, step_explicit, step_implicit
from .kernels import DiscreteNonlocalOperator, KernelSpec, assemble_operator, eval_kernel, second_moment
from .operators import Local, Nonlocal, apply_laplacian_neumann, apply_nonlocal
from .reactions import BUILTINS, ReactionSystem, audit, estimate_poly_degree

__version__ = "0.1.0"
