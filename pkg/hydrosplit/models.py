"""
Data models and type definitions for hydrosplit.

Enums name every discrete choice of the scheme; frozen dataclasses hold the
solver and scheme configuration, per-solve statistics, the per-step energy
ledger and the error/rate reports produced by verification runs.
"""

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .exceptions import ValidationError


class ElementKind(Enum):
    """Finite element families on tetrahedra and surface triangles."""

    P1 = "p1"
    P2 = "p2"
    P1_BUBBLE = "p1_bubble"
    P1_SURFACE = "p1_surface"


class BoundaryTag(Enum):
    """Face classification of a column mesh."""

    INTERIOR = 0
    SURFACE = 1
    BOTTOM = 2
    LATERAL = 3


class Variant(Enum):
    """How the vertical velocity is obtained at each step."""

    R = "R"  # z-elliptic Y_h solve
    Q = "Q"  # exact column integral


class CoriolisMode(Enum):
    NONE = "none"
    EXPLICIT = "explicit"
    CORRECTION = "correction"


class DataSampling(Enum):
    """Time sampling of the body force and surface traction."""

    POINTWISE = "pointwise"
    AVERAGED = "averaged"


class InitMode(Enum):
    L2_PROJECTION = "l2_projection"
    STOKES_PROJECTION = "stokes_projection"
    INTERPOLATION = "interpolation"


class SolverMethod(Enum):
    MONOLITHIC_DIRECT = "monolithic_direct"
    UZAWA = "uzawa"
    AUGMENTED_LAGRANGIAN = "augmented_lagrangian"


class Coupling(Enum):
    """Rule tying the time step to the mesh size in refinement studies."""

    K_EQ_H2 = "k_eq_h2"
    K_EQ_H = "k_eq_h"
    FIXED_K = "fixed_k"


class ElementPair(Enum):
    """Velocity/vertical-velocity element choice (pressure is always surface P1)."""

    TAYLOR_HOOD = "taylor_hood"
    MINI = "mini"

    @property
    def velocity_kind(self) -> ElementKind:
        return ElementKind.P2 if self is ElementPair.TAYLOR_HOOD else ElementKind.P1_BUBBLE

    @property
    def vertical_kind(self) -> ElementKind:
        return ElementKind.P2 if self is ElementPair.TAYLOR_HOOD else ElementKind.P1

    @property
    def order(self) -> int:
        """Approximation order l of the pair."""
        return 2 if self is ElementPair.TAYLOR_HOOD else 1


@dataclass(frozen=True)
class SolverConfig:
    """Configuration of one linear solve.

    ``rho`` is the Uzawa step as a fraction of 1/λ_max of the weighted
    Schur complement (values in (0, 2) converge); for the augmented
    Lagrangian it is the multiplier step and ``gamma`` the penalty weight.
    """

    method: SolverMethod = SolverMethod.MONOLITHIC_DIRECT
    tol: float = 1e-10
    max_iter: int = 5000
    rho: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError(f"Solver tolerance must be positive, got {self.tol!r}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be at least 1, got {self.max_iter!r}")
        if self.method is not SolverMethod.MONOLITHIC_DIRECT and not self.rho > 0:
            raise ValidationError(f"rho must be positive, got {self.rho!r}")
        if self.method is SolverMethod.AUGMENTED_LAGRANGIAN and not self.gamma > 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma!r}")

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary format."""
        return {
            "method": self.method.value,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "rho": self.rho,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SolverConfig":
        """Create SolverConfig from dictionary."""
        return cls(
            method=SolverMethod(data.get("method", SolverMethod.MONOLITHIC_DIRECT.value)),
            tol=float(data.get("tol", 1e-10)),
            max_iter=int(data.get("max_iter", 5000)),
            rho=float(data.get("rho", 1.0)),
            gamma=float(data.get("gamma", 1.0)),
        )


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme variant, time grid and physical constants of a run."""

    variant: Variant = Variant.R
    coriolis: CoriolisMode = CoriolisMode.NONE
    nu: float = 1.0
    f_cor: float = 0.0
    T: float = 0.5
    M: int = 8
    data_sampling: DataSampling = DataSampling.POINTWISE
    averaging_points: int = 2
    init: InitMode = InitMode.INTERPOLATION
    substep0: SolverConfig = field(default_factory=lambda: SolverConfig(tol=1e-12))
    substep1: SolverConfig = field(default_factory=lambda: SolverConfig(tol=1e-12))
    substep2: SolverConfig = field(default_factory=lambda: SolverConfig(tol=1e-12))

    def __post_init__(self):
        if self.M < 0:
            raise ValidationError(f"Step count M must be non-negative, got {self.M!r}")
        if not self.T > 0:
            raise ValidationError(f"Final time T must be positive, got {self.T!r}")
        if not self.nu > 0:
            raise ValidationError(f"Viscosity must be positive, got {self.nu!r}")
        if self.averaging_points < 1:
            raise ValidationError("averaging_points must be at least 1")

    @property
    def k(self) -> float:
        """Time step T/M (T itself when M = 0)."""
        return self.T / self.M if self.M else self.T

    def time(self, m: int) -> float:
        """Time node t_m = m k."""
        return m * self.k

    def with_steps(self, M: int) -> "SchemeConfig":
        return replace(self, M=M)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary format."""
        return {
            "variant": self.variant.value,
            "coriolis": self.coriolis.value,
            "nu": self.nu,
            "f_cor": self.f_cor,
            "T": self.T,
            "M": self.M,
            "data_sampling": self.data_sampling.value,
            "averaging_points": self.averaging_points,
            "init": self.init.value,
            "substep0": self.substep0.to_dict(),
            "substep1": self.substep1.to_dict(),
            "substep2": self.substep2.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SchemeConfig":
        """Create SchemeConfig from dictionary."""
        defaults = cls()
        return cls(
            variant=Variant(data.get("variant", defaults.variant.value)),
            coriolis=CoriolisMode(data.get("coriolis", defaults.coriolis.value)),
            nu=float(data.get("nu", defaults.nu)),
            f_cor=float(data.get("f_cor", defaults.f_cor)),
            T=float(data.get("T", defaults.T)),
            M=int(data.get("M", defaults.M)),
            data_sampling=DataSampling(data.get("data_sampling", defaults.data_sampling.value)),
            averaging_points=int(data.get("averaging_points", defaults.averaging_points)),
            init=InitMode(data.get("init", defaults.init.value)),
            substep0=SolverConfig.from_dict(data.get("substep0", defaults.substep0.to_dict())),
            substep1=SolverConfig.from_dict(data.get("substep1", defaults.substep1.to_dict())),
            substep2=SolverConfig.from_dict(data.get("substep2", defaults.substep2.to_dict())),
        )


@dataclass
class SolveStats:
    """Iteration and residual record of one solve."""

    method: str
    iterations: int
    residual_u: float
    residual_p: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EnergyRecord:
    """Per-step energy ledger.

    ``residual`` is |LHS − RHS| of the discrete energy identity
    |u^{m+1}|² − |u^m|² + |u^{m+1/2} − u^m|² + |u^{m+1} − u^{m+1/2}|²
    + kν(‖u^{m+1/2}‖² + ‖u^{m+1}‖² + ‖u^{m+1} − u^{m+1/2}‖²)
    = 2k⟨F^{m+1}, u^{m+1/2}⟩ + Coriolis work.
    """

    kinetic: float = 0.0
    dissipation: float = 0.0
    numerical_dissipation: float = 0.0
    work: float = 0.0
    coriolis_work: float = 0.0
    residual: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# Norm names shared by ErrorReport aggregates and RateTable columns.
NORM_NAMES = (
    "u_linf_l2",
    "u_l2_l2",
    "u_l2_h1",
    "uhalf_linf_l2",
    "uhalf_l2_h1",
    "p_l2_l2",
    "u3_l2_hdz",
    "dtu_l2_l2",
)


@dataclass
class ErrorReport:
    """Discrete-norm errors of one run against an exact solution.

    ``per_step`` holds one dict per time node m ≥ 1 with the L²/H¹ velocity
    errors of u^m and u^{m-1/2}, the L²(S) pressure error, the H(∂z) error of
    the vertical velocity and |δ_t e^m|. ``aggregates`` holds the discrete
    in time norms keyed by NORM_NAMES, e.g. ‖e‖_{l²(H¹)} = (k Σ ‖e^m‖²)^{1/2}.
    """

    h: float
    k: float
    variant: str
    element: str
    per_step: List[Dict[str, float]] = field(default_factory=list)
    aggregates: Dict[str, float] = field(default_factory=dict)
    first_step_dt: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RateRow:
    """One refinement level of a convergence study."""

    level: int
    h: float
    k: float
    dofs: int
    errors: Dict[str, float]


@dataclass
class RateTable:
    """Errors across a (h, k) sequence and the orders fitted from them."""

    rows: List[RateRow]
    norms: Sequence[str] = NORM_NAMES
    coupling: str = Coupling.K_EQ_H2.value

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: -r.h)

    def pairwise_orders(self, norm: str) -> List[float]:
        """log(e_i/e_{i+1}) / log(h_i/h_{i+1}) for adjacent rows."""
        orders = []
        for a, b in zip(self.rows, self.rows[1:]):
            ea, eb = a.errors.get(norm, math.nan), b.errors.get(norm, math.nan)
            if ea > 0 and eb > 0:
                orders.append(math.log(ea / eb) / math.log(a.h / b.h))
            else:
                orders.append(math.nan)
        return orders

    def fitted_order(self, norm: str) -> float:
        """Least-squares slope of log(error) against log(h)."""
        hs = np.array([r.h for r in self.rows])
        es = np.array([r.errors.get(norm, math.nan) for r in self.rows])
        ok = es > 0
        if ok.sum() < 2:
            return math.nan
        slope, _ = np.polyfit(np.log(hs[ok]), np.log(es[ok]), 1)
        return float(slope)

    def to_rows(self) -> List[List[Any]]:
        """Tabular form: header, one row per level, then the fitted orders."""
        header = ["level", "h", "k", "dofs"] + list(self.norms)
        header += [f"order_{n}" for n in self.norms]
        out: List[List[Any]] = [header]
        orders = {n: [math.nan] + self.pairwise_orders(n) for n in self.norms}
        for i, row in enumerate(self.rows):
            out.append(
                [row.level, row.h, row.k, row.dofs]
                + [row.errors.get(n, math.nan) for n in self.norms]
                + [orders[n][i] for n in self.norms]
            )
        return out

    def summary(self, thresholds: Dict[str, float]) -> Dict[str, Any]:
        """Pass/fail of each threshold against the least-squares order."""
        checks = {}
        for norm, minimum in thresholds.items():
            order = self.fitted_order(norm)
            checks[norm] = {
                "fitted_order": order,
                "threshold": minimum,
                "passed": bool(order >= minimum),
            }
        return {
            "coupling": self.coupling,
            "levels": [r.level for r in self.rows],
            "k_over_h2": [r.k / r.h**2 for r in self.rows],
            "checks": checks,
            "passed": all(c["passed"] for c in checks.values()),
        }
