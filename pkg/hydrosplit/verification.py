"""
Manufactured solutions, discrete error norms and convergence studies.

The manufactured family is u = cos(t)·s(x, y)·w(z; D)·(1, 1) with
s = sin(πx̂) sin(πŷ) on the rectangle (x̂, ŷ rescaled to [0, 1]) and
w = (z + D)(z + D/3), whose vertical mean vanishes for every depth D. The
vertical flux is then zero, u vanishes on the bottom and lateral walls, and
u₃ = ∫_z^0 ∇x·u ds vanishes at the surface and at the bottom.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DomainUnsupported, ValidationError
from .fe_spaces import DiscreteField, FESpace, quadrature_values
from .hydrostatic_stokes import stokes_projector
from .mesh import Bathymetry, SurfaceDomainSpec, refine_uniform
from .models import (
    NORM_NAMES,
    Coupling,
    ElementPair,
    ErrorReport,
    RateRow,
    RateTable,
    SchemeConfig,
    Variant,
)
from .stepper import DiscreteSpaces, ProblemData, StateSnapshot, Stepper
from .utils import chunk_ranges, ordered_map

logger = logging.getLogger(__name__)

# Minimum fitted orders per norm, by (element pair, variant).
ACCEPTANCE_THRESHOLDS: Dict[Tuple[ElementPair, Variant], Dict[str, float]] = {
    (ElementPair.TAYLOR_HOOD, Variant.R): {"u_l2_h1": 1.8, "u_linf_l2": 1.8, "p_l2_l2": 1.8},
    (ElementPair.MINI, Variant.R): {"u_l2_h1": 0.9, "p_l2_l2": 0.9},
    (ElementPair.MINI, Variant.Q): {"u_l2_l2": 1.8, "p_l2_l2": 0.9},
    (ElementPair.TAYLOR_HOOD, Variant.Q): {"u_l2_h1": 1.8, "p_l2_l2": 1.8},
}


class ManufacturedSolution:
    """Exact solution of the hydrostatic system with derived f and g_s.

    All field methods accept complex inputs, so derivatives can be checked
    independently by complex-step differentiation.
    """

    def __init__(self, domain: SurfaceDomainSpec, nu: float = 1.0, f_cor: float = 0.0):
        if not domain.is_rectangle:
            raise DomainUnsupported("The manufactured family is defined on rectangles only")
        if not isinstance(domain.depth, Bathymetry):
            raise DomainUnsupported("The manufactured family needs a linear bathymetry")
        self.domain = domain
        self.nu = nu
        self.f_cor = f_cor
        x0, x1, y0, y1 = domain.bounds
        self._x0, self._y0 = x0, y0
        self._ax, self._ay = math.pi / (x1 - x0), math.pi / (y1 - y0)
        self._Dx, self._Dy = domain.depth.gradient

    # -- building blocks -----------------------------------------------

    def _depth(self, x, y):
        d = self.domain.depth
        return d.d0 + d.dx * x + d.dy * y

    def _s(self, x, y):
        ax, ay = self._ax, self._ay
        X, Y = ax * (x - self._x0), ay * (y - self._y0)
        sx, cx, sy, cy = np.sin(X), np.cos(X), np.sin(Y), np.cos(Y)
        return {
            "s": sx * sy,
            "x": ax * cx * sy,
            "y": ay * sx * cy,
            "xx": -(ax**2) * sx * sy,
            "yy": -(ay**2) * sx * sy,
        }

    @staticmethod
    def _w(z, D):
        return {
            "w": (z + D) * (z + D / 3.0),
            "z": 2.0 * z + 4.0 * D / 3.0,
            "zz": 2.0,
            "D": 4.0 * z / 3.0 + 2.0 * D / 3.0,
            "DD": 2.0 / 3.0,
            # ∫_z^0 w ds and ∫_z^0 ∂_D w ds
            "W": -(z**3 / 3.0 + 2.0 * D * z**2 / 3.0 + D**2 * z / 3.0),
            "V": -(2.0 / 3.0) * (z**2 + D * z),
        }

    def _parts(self, points):
        points = np.asarray(points)
        x, y, z = points[..., 0], points[..., 1], points[..., 2]
        return self._s(x, y), self._w(z, self._depth(x, y))

    # -- exact fields ---------------------------------------------------

    def u(self, points, t: float):
        s, w = self._parts(points)
        val = math.cos(t) * s["s"] * w["w"]
        return np.stack([val, val], axis=-1)

    def du_dt(self, points, t: float):
        s, w = self._parts(points)
        val = -math.sin(t) * s["s"] * w["w"]
        return np.stack([val, val], axis=-1)

    def grad_u(self, points, t: float):
        """∂_d u_c with shape (n, 2, 3)."""
        s, w = self._parts(points)
        C = math.cos(t)
        gx = C * (s["x"] * w["w"] + s["s"] * w["D"] * self._Dx)
        gy = C * (s["y"] * w["w"] + s["s"] * w["D"] * self._Dy)
        gz = C * s["s"] * w["z"]
        row = np.stack([gx, gy, gz], axis=-1)
        return np.stack([row, row], axis=-2)

    def laplacian_u(self, points, t: float):
        s, w = self._parts(points)
        C = math.cos(t)
        Dx, Dy = self._Dx, self._Dy
        val = C * (
            (s["xx"] + s["yy"]) * w["w"]
            + 2.0 * w["D"] * (s["x"] * Dx + s["y"] * Dy)
            + s["s"] * w["DD"] * (Dx**2 + Dy**2)
            + s["s"] * w["zz"]
        )
        return np.stack([val, val], axis=-1)

    def div_x_u(self, points, t: float):
        g = self.grad_u(points, t)
        return g[..., 0, 0] + g[..., 1, 1]

    def u3(self, points, t: float):
        s, w = self._parts(points)
        return math.cos(t) * ((s["x"] + s["y"]) * w["W"] + s["s"] * (self._Dx + self._Dy) * w["V"])

    def dz_u3(self, points, t: float):
        return -self.div_x_u(points, t)

    def p(self, xy, t: float):
        xy = np.asarray(xy)
        X = self._ax * (xy[..., 0] - self._x0)
        Y = self._ay * (xy[..., 1] - self._y0)
        return math.cos(t) * np.cos(X) * np.cos(Y)

    def grad_p(self, xy, t: float):
        xy = np.asarray(xy)
        X = self._ax * (xy[..., 0] - self._x0)
        Y = self._ay * (xy[..., 1] - self._y0)
        C = math.cos(t)
        return np.stack(
            [-C * self._ax * np.sin(X) * np.cos(Y), -C * self._ay * np.cos(X) * np.sin(Y)], axis=-1
        )

    def convection(self, points, t: float):
        """(u·∇x)u + u₃ ∂z u."""
        u = self.u(points, t)
        g = self.grad_u(points, t)
        u3 = self.u3(points, t)
        return (
            u[..., 0, None] * g[..., 0] + u[..., 1, None] * g[..., 1] + u3[..., None] * g[..., 2]
        )

    def f(self, points, t: float):
        """Body force closing the momentum equation."""
        u = self.u(points, t)
        rhs = (
            self.du_dt(points, t)
            + self.convection(points, t)
            - self.nu * self.laplacian_u(points, t)
            + self.grad_p(np.asarray(points)[..., :2], t)
        )
        if self.f_cor:
            rhs = rhs + self.f_cor * np.stack([-u[..., 1], u[..., 0]], axis=-1)
        return rhs

    def g_s(self, xy, t: float):
        """Surface traction ν ∂z u at z = 0."""
        xy = np.asarray(xy)
        pts = np.concatenate([xy, np.zeros(xy.shape[:-1] + (1,))], axis=-1)
        return self.nu * self.grad_u(pts, t)[..., 2]

    def problem_data(self) -> ProblemData:
        return ProblemData(
            f=self.f,
            g_s=self.g_s,
            u0=lambda pts: self.u(pts, 0.0),
            grad_u0=lambda pts: self.grad_u(pts, 0.0),
            p0=lambda xy: self.p(xy, 0.0),
        )


def manufactured_default(
    domain: Optional[SurfaceDomainSpec] = None, nu: float = 1.0, f_cor: float = 0.0
) -> ManufacturedSolution:
    """Manufactured solution on ``domain`` (unit square, D = 1 by default).

    Raises:
        DomainUnsupported: If the surface is not a rectangle or D is not linear.
    """
    return ManufacturedSolution(domain or SurfaceDomainSpec(), nu, f_cor)


def _volume_error(
    field: DiscreteField,
    exact: Callable[[np.ndarray], np.ndarray],
    exact_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[float, float, np.ndarray]:
    """Squared L² and H¹-seminorm errors plus the error at quadrature points."""
    space = field.space
    l2 = h1 = 0.0
    errs = []
    for a, b in chunk_ranges(space.cell_count):
        cells = np.arange(a, b)
        _, _, wdet, pts = space.element_basis(cells)
        vals, grads = quadrature_values(field, cells)
        ex = np.asarray(exact(pts.reshape(-1, pts.shape[-1]))).reshape(vals.shape)
        diff = ex - vals
        errs.append(diff)
        l2 += float(np.einsum("eq,eqc->", wdet, diff**2))
        if exact_grad is not None:
            gx = np.asarray(exact_grad(pts.reshape(-1, pts.shape[-1]))).reshape(grads.shape)
            h1 += float(np.einsum("eq,eqcd->", wdet, (gx - grads) ** 2))
    return l2, h1, np.concatenate(errs)


class ErrorAccumulator:
    """Streaming error hook: feed it every snapshot, then call :meth:`report`.

    Per-step entries are the plain (not squared) norms; aggregates follow
    the discrete-in-time norms, e.g. ‖e‖_{l²(H¹)} = (k Σ_m ‖e^m‖²)^{1/2}
    over m = 1 … M.
    """

    def __init__(
        self,
        spaces: DiscreteSpaces,
        ms,
        k: float,
        variant: Variant = Variant.R,
    ):
        self.spaces = spaces
        self.ms = ms
        self.k = k
        self.variant = variant
        self.per_step: List[Dict[str, float]] = []
        self._previous: Optional[np.ndarray] = None
        self._weights: Optional[np.ndarray] = None

    def __call__(self, state: StateSnapshot) -> None:
        ms, t = self.ms, state.t
        Xh = self.spaces.Xh
        l2, h1, err = _volume_error(state.u, lambda p: ms.u(p, t), lambda p: ms.grad_u(p, t))
        if self._weights is None:
            self._weights = np.concatenate(
                [Xh.element_basis(np.arange(a, b))[2] for a, b in chunk_ranges(Xh.cell_count)]
            )
        if state.m == 0:
            self._previous = err
            return
        entry = {"m": state.m, "t": t, "u_l2": math.sqrt(l2), "u_h1": math.sqrt(h1)}
        if state.u_half is not None:
            hl2, hh1, _ = _volume_error(state.u_half, lambda p: ms.u(p, t), lambda p: ms.grad_u(p, t))
            entry["uhalf_l2"], entry["uhalf_h1"] = math.sqrt(hl2), math.sqrt(hh1)
        pl2, _, _ = _volume_error(state.p, lambda xy: ms.p(xy, t))
        entry["p_l2"] = math.sqrt(pl2)
        entry["u3_hdz"] = math.sqrt(self._vertical_error(state))
        if self._previous is not None:
            dt = (err - self._previous) / self.k
            entry["dtu_l2"] = math.sqrt(float(np.einsum("eq,eqc->", self._weights, dt**2)))
        self._previous = err
        self.per_step.append(entry)

    def _vertical_error(self, state: StateSnapshot) -> float:
        Xh, ms, t = self.spaces.Xh, self.ms, state.t
        total = 0.0
        for a, b in chunk_ranges(Xh.cell_count):
            cells = np.arange(a, b)
            _, _, wdet, pts = Xh.element_basis(cells)
            u3, dz = state.u3.quadrature_values(cells, Xh.quadrature)
            flat = pts.reshape(-1, 3)
            e3 = ms.u3(flat, t).reshape(u3.shape) - u3
            ez = ms.dz_u3(flat, t).reshape(dz.shape) - dz
            total += float(np.einsum("eq,eq->", wdet, e3**2 + ez**2))
        return total

    def aggregates(self) -> Dict[str, float]:
        k, steps = self.k, self.per_step

        def l2(key):
            vals = [s[key] for s in steps if key in s]
            return math.sqrt(k * sum(v * v for v in vals)) if vals else math.nan

        def linf(key):
            vals = [s[key] for s in steps if key in s]
            return max(vals) if vals else math.nan

        return {
            "u_linf_l2": linf("u_l2"),
            "u_l2_l2": l2("u_l2"),
            "u_l2_h1": l2("u_h1"),
            "uhalf_linf_l2": linf("uhalf_l2"),
            "uhalf_l2_h1": l2("uhalf_h1"),
            "p_l2_l2": l2("p_l2"),
            "u3_l2_hdz": l2("u3_hdz"),
            "dtu_l2_l2": l2("dtu_l2"),
        }

    def report(self) -> ErrorReport:
        first = self.per_step[0].get("dtu_l2") if self.per_step else None
        return ErrorReport(
            h=self.spaces.mesh.h,
            k=self.k,
            variant=self.variant.value,
            element=self.spaces.pair.value,
            per_step=list(self.per_step),
            aggregates=self.aggregates(),
            first_step_dt=first,
        )


def compute_errors(
    history, ms, spaces: DiscreteSpaces
) -> ErrorReport:
    """Errors of every stored snapshot against the exact solution."""
    acc = ErrorAccumulator(spaces, ms, history.config.k, history.config.variant)
    for state in history.states:
        acc(state)
    return acc.report()


def projection_errors(
    state: StateSnapshot, ms, spaces: DiscreteSpaces
) -> Dict[str, float]:
    """Distance between u_h^m and the Stokes projection I_h u(t_m)."""
    t = state.t
    Ih, Jh = stokes_projector(
        spaces.Xh, spaces.Qh, grad_v=lambda p: ms.grad_u(p, t), q=lambda xy: ms.p(xy, t)
    )
    diff = DiscreteField(spaces.Xh, Ih.coefficients - state.u.coefficients)
    l2, h1, _ = _volume_error(diff, lambda p: np.zeros((len(p), 2)), lambda p: np.zeros((len(p), 2, 3)))
    pdiff = DiscreteField(spaces.Qh, Jh.coefficients - state.p.coefficients)
    pl2, _, _ = _volume_error(pdiff, lambda xy: np.zeros(len(xy)))
    return {"u_l2": math.sqrt(l2), "u_h1": math.sqrt(h1), "p_l2": math.sqrt(pl2)}


@dataclass
class StudyTemplate:
    """Everything of a convergence study except the level."""

    domain: SurfaceDomainSpec = field(default_factory=SurfaceDomainSpec)
    target_h: float = 0.25
    layers: int = 4
    pair: ElementPair = ElementPair.TAYLOR_HOOD
    scheme: SchemeConfig = field(default_factory=SchemeConfig)


def steps_for(h: float, T: float, coupling: Coupling, fixed_steps: int) -> int:
    """Step count M realizing the coupling rule on [0, T].

    Raises:
        ValidationError: If the resulting k violates the rule.
    """
    if coupling is Coupling.FIXED_K:
        return fixed_steps
    target = h * h if coupling is Coupling.K_EQ_H2 else h
    M = max(1, math.ceil(T / target - 1e-9))
    if T / M > target * (1 + 1e-12):
        raise ValidationError(f"k = {T / M} violates the {coupling.value} coupling (h = {h})")
    return M


def run_level(template: StudyTemplate, level: int, coupling: Coupling) -> RateRow:
    """Run the scheme on one refinement level and measure its errors."""
    h = template.target_h / 2**level
    mesh = refine_uniform(template.domain, template.target_h, template.layers, level)
    spaces = DiscreteSpaces.build(mesh, template.pair)
    cfg = template.scheme.with_steps(steps_for(h, template.scheme.T, coupling, template.scheme.M))
    ms = manufactured_default(template.domain, cfg.nu, cfg.f_cor)
    acc = ErrorAccumulator(spaces, ms, cfg.k, cfg.variant)
    stepper = Stepper(cfg, spaces, ms.problem_data())
    history = stepper.run(hooks=[acc], keep_states=False)
    report = acc.report()
    errors = dict(report.aggregates)
    errors["div_max"] = max((row["div_norm"] for row in history.ledger[1:]), default=0.0)
    errors["first_step_dt"] = report.first_step_dt if report.first_step_dt is not None else math.nan
    logger.info(
        "level %d: h=%.4g k=%.4g dofs=%d u_l2_h1=%.4e p_l2_l2=%.4e",
        level, h, cfg.k, spaces.dof_count, errors["u_l2_h1"], errors["p_l2_l2"],
    )
    return RateRow(level=level, h=h, k=cfg.k, dofs=spaces.dof_count, errors=errors)


def convergence_study(
    template: StudyTemplate,
    levels: Sequence[int] = (0, 1, 2),
    coupling: Coupling = Coupling.K_EQ_H2,
    workers: int = 1,
) -> RateTable:
    """Run every level (concurrently up to ``workers``) and tabulate the rates."""
    levels = list(levels)
    if len(levels) < 2:
        raise ValidationError("A convergence study needs at least two levels")
    rows = ordered_map(lambda lv: run_level(template, lv, coupling), levels, workers)
    return RateTable(rows=rows, norms=NORM_NAMES, coupling=coupling.value)


def thresholds_for(pair: ElementPair, variant: Variant) -> Dict[str, float]:
    return dict(ACCEPTANCE_THRESHOLDS[(pair, variant)])


def with_variant(template: StudyTemplate, variant: Variant) -> StudyTemplate:
    return replace(template, scheme=replace(template.scheme, variant=variant))
