"""Adaptive P1 finite elements for the regularized Poisson-Boltzmann equation."""

__version__ = "0.1.0"

from .adapt import (AfemHistory, AfemRecord, FixedReference, LocalReference, MarkingConfig, Problem,
                    StopCriteria, afem_loop, contraction_monitor, dorfler, mark, oscillation_switch,
                    reference_solution)
from .assembly import (A1Report, DofMap, FemSystem, assemble_B, assemble_B_jacobian, assemble_fG,
                       assemble_mass, assemble_stiffness, check_A1, energy, error_norms, h1_norm,
                       interpolate_dirichlet)
from .errors import (AssumptionError, ConfigError, InvalidReferenceError, MeshError, ModelError,
                     OverflowGuardError, PbafemError, SingularityError, SolverError)
from .estimator import ErrorEstimate, estimate, face_jump
from .geometry import (MOLECULAR, SOLVENT, Charge, ChargeSystem, CircleInterface, DielectricModel, DomainBox,
                       PolygonInterface, check_sigma, eval_boundary_g, eval_G, eval_grad_G, make_charges,
                       read_charges, region_of)
from .mesh import (Mesh, assign_regions, bisect, build_cube_5tet_grid, build_cube_6tet_grid, build_square_grid,
                   check_interior_nodes, check_nested, is_conforming, prolongate, shape_regularity_report,
                   uniform_refine)
from .solver import (LInftyBounds, SolutionBundle, SolveConfig, compute_linfty_bounds, newton, solve_linear_part,
                     solve_nonlinear_part, solve_rpbe)

__all__ = [
    "AfemHistory", "AfemRecord", "FixedReference", "LocalReference", "MarkingConfig", "Problem",
    "StopCriteria", "afem_loop", "contraction_monitor", "dorfler", "mark", "oscillation_switch",
    "reference_solution", "A1Report", "DofMap", "FemSystem", "assemble_B", "assemble_B_jacobian",
    "assemble_fG", "assemble_mass", "assemble_stiffness", "check_A1", "energy", "error_norms", "h1_norm",
    "interpolate_dirichlet", "AssumptionError", "ConfigError", "InvalidReferenceError", "MeshError",
    "ModelError", "OverflowGuardError", "PbafemError", "SingularityError", "SolverError", "ErrorEstimate",
    "estimate", "face_jump", "MOLECULAR", "SOLVENT", "Charge", "ChargeSystem", "CircleInterface",
    "DielectricModel", "DomainBox", "PolygonInterface", "check_sigma", "eval_boundary_g", "eval_G",
    "eval_grad_G", "make_charges", "read_charges", "region_of", "Mesh", "assign_regions", "bisect",
    "build_cube_5tet_grid", "build_cube_6tet_grid", "build_square_grid", "check_interior_nodes",
    "check_nested", "is_conforming", "prolongate", "shape_regularity_report", "uniform_refine", "LInftyBounds",
    "SolutionBundle", "SolveConfig", "compute_linfty_bounds", "newton", "solve_linear_part", "solve_nonlinear_part",
    "solve_rpbe",
]
