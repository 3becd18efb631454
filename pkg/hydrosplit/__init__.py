"""
hydrosplit

Finite elements for the hydrostatic Primitive Equations advanced by a
viscosity-splitting fractional-step scheme: column meshes, Taylor-Hood and
mini-element spaces, the hydrostatic Stokes saddle solvers, a time stepper
with an energy ledger, and a manufactured-solution convergence harness.
"""

__version__ = "1.0.0"

from .exceptions import (
    HydrosplitException,
    ValidationError,
    ConfigError,
    FieldMismatch,
    MeshError,
    NonconformingSplit,
    RayEscape,
    SolverError,
    SolverDiverged,
    SingularSystem,
    EigSolverStalled,
    EvaluatorDomain,
    HaltedByHook,
)
from .models import (
    ElementKind,
    ElementPair,
    Variant,
    CoriolisMode,
    DataSampling,
    InitMode,
    SolverMethod,
    Coupling,
    SolverConfig,
    SchemeConfig,
    RateTable,
)
from .mesh import (
    Bathymetry,
    NodalBathymetry,
    SurfaceDomainSpec,
    ColumnMesh,
    build_surface_mesh,
    extrude_iso_sigma,
    refine_uniform,
)
from .fe_spaces import DiscreteField, FESpace, interpolate
from .hydrostatic_stokes import SaddleSolver, compute_infsup, solve_saddle
from .stepper import DiscreteSpaces, ProblemData, Stepper, run
from .verification import ManufacturedSolution, convergence_study, manufactured_default

__all__ = [
    "HydrosplitException",
    "ValidationError",
    "ConfigError",
    "FieldMismatch",
    "MeshError",
    "NonconformingSplit",
    "RayEscape",
    "SolverError",
    "SolverDiverged",
    "SingularSystem",
    "EigSolverStalled",
    "EvaluatorDomain",
    "HaltedByHook",
    "ElementKind",
    "ElementPair",
    "Variant",
    "CoriolisMode",
    "DataSampling",
    "InitMode",
    "SolverMethod",
    "Coupling",
    "SolverConfig",
    "SchemeConfig",
    "RateTable",
    "Bathymetry",
    "NodalBathymetry",
    "SurfaceDomainSpec",
    "ColumnMesh",
    "build_surface_mesh",
    "extrude_iso_sigma",
    "refine_uniform",
    "DiscreteField",
    "FESpace",
    "interpolate",
    "SaddleSolver",
    "compute_infsup",
    "solve_saddle",
    "DiscreteSpaces",
    "ProblemData",
    "Stepper",
    "run",
    "ManufacturedSolution",
    "convergence_study",
    "manufactured_default",
]
