"""Non-isothermal Bingham flow: Huber-regularized multiplier formulation,
cross-grid P1-Q0 elements, BDF2 time stepping and a semismooth Newton solver."""
from .assembly import PhysicalParams, assemble_constant_operators
from .config import RunConfig, parse_config, preset
from .huber import RegularizationParams
from .mesh import Mesh, build_cross_grid, inradius
from .ssn import FlowStepProblem, SsnState, ssn_solve
from .stepper import Model, TimeGrid, run, solve_theta0

__all__ = [
    "Mesh", "build_cross_grid", "inradius", "PhysicalParams", "assemble_constant_operators",
    "RegularizationParams", "FlowStepProblem", "SsnState", "ssn_solve", "Model", "TimeGrid",
    "run", "solve_theta0", "RunConfig", "parse_config", "preset",
]
__version__ = "0.1.0"
