"""
Vertical velocity from the horizontal field.

Two evaluators share one interface:

* ``ProjectedEvaluator`` holds u_{3,h} ∈ Y_h solving the z-elliptic problem
  (∂z u_{3,h}, ∂z y_h) = −(∇x·u_h, ∂z y_h).
* ``IntegralEvaluator`` computes u₃(x, z) = ∫_z^0 ∇x·u_h(x, s) ds exactly,
  segment by segment along the vertical ray inside the column of x.

Both expose ``evaluate(points)`` and ``quadrature_values(cells, rule)``
returning (u₃, ∂z u₃); the convection assembly only relies on the latter.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import apply_dirichlet, assemble_zcoupling, assemble_zstiffness
from .exceptions import ColumnMismatch, RayEscape, SingularSystem, SolverDiverged
from .fe_spaces import DiscreteField, FESpace, evaluate, evaluate_at, quadrature_values
from .models import SolverConfig, SolverMethod, Variant
from .quadrature import QuadratureRule, gauss_legendre

logger = logging.getLogger(__name__)

# Gauss-Legendre points per ray segment; ∇x·u_h is at most cubic along a
# vertical line for every supported velocity element.
RAY_POINTS = 3


class VerticalEvaluator:
    """Common interface of the vertical-velocity providers."""

    variant: Variant

    def evaluate(
        self, points: np.ndarray, cells: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def quadrature_values(
        self, cells: np.ndarray, rule: QuadratureRule
    ) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class ProjectedEvaluator(VerticalEvaluator):
    """u_{3,h} stored as a Y_h field."""

    variant = Variant.R

    def __init__(self, field: DiscreteField, residual: float = 0.0):
        self.field = field
        self.residual = residual

    def evaluate(self, points, cells=None):
        points = np.atleast_2d(points)
        if cells is None:
            values, grads = evaluate_at(self.field, points)
        else:
            mesh = self.field.space.mesh
            values, grads = evaluate(self.field, cells, mesh.barycentric(cells, points))
        return values[:, 0], grads[:, 0, 2]

    def quadrature_values(self, cells, rule):
        values, grads = quadrature_values(self.field, cells, rule)
        return values[..., 0], grads[..., 0, 2]


class VerticalSolver:
    """Cached Sub-step 0 operators: masked z-stiffness and the z-coupling.

    The z-stiffness is factorized once; every call to :meth:`solve` is then
    one sparse triangular solve (or a CG run for iterative configurations).
    """

    def __init__(self, Yh: FESpace, Xh: FESpace, solver: Optional[SolverConfig] = None, workers: int = 1):
        if Yh.mesh is None or Xh.mesh is None:
            raise ColumnMismatch("Vertical velocity needs volume spaces")
        self.Yh = Yh
        self.Xh = Xh
        self.solver = solver or SolverConfig(tol=1e-12)
        mask = Yh.dirichlet_mask
        self.matrix = apply_dirichlet(assemble_zstiffness(Yh, workers), mask).tocsc()
        self.coupling = sp.diags((~mask).astype(float)) @ assemble_zcoupling(Yh, Xh, workers)
        self._lu = None
        if self.solver.method is SolverMethod.MONOLITHIC_DIRECT:
            try:
                self._lu = spla.splu(self.matrix)
            except RuntimeError as exc:
                raise SingularSystem(f"z-stiffness factorization failed: {exc}")

    def solve(self, u_h: DiscreteField) -> ProjectedEvaluator:
        """Sub-step 0 for one horizontal field.

        Raises:
            SolverDiverged: If CG misses its tolerance.
        """
        rhs = self.coupling @ u_h.coefficients
        if not np.any(rhs):
            return ProjectedEvaluator(DiscreteField.zeros(self.Yh, u_h.time_label))
        if self._lu is not None:
            y = self._lu.solve(rhs)
        else:
            y, info = spla.cg(
                self.matrix, rhs, rtol=self.solver.tol, atol=0.0, maxiter=self.solver.max_iter
            )
            if info != 0:
                raise SolverDiverged("cg", info, float(np.linalg.norm(self.matrix @ y - rhs)))
        residual = float(np.linalg.norm(self.matrix @ y - rhs) / max(np.linalg.norm(rhs), 1e-300))
        logger.debug("sub-step 0 relative residual %.3e", residual)
        return ProjectedEvaluator(DiscreteField(self.Yh, y, u_h.time_label), residual)


def solve_substep0(
    u_h: DiscreteField, Yh: FESpace, solver: Optional[SolverConfig] = None
) -> ProjectedEvaluator:
    """Compute u_{3,h} ∈ Y_h from u_h (one-off; use VerticalSolver in loops)."""
    return VerticalSolver(Yh, u_h.space, solver).solve(u_h)


class IntegralEvaluator(VerticalEvaluator):
    """Exact column integral of ∇x·u_h.

    Evaluated lazily at the requested points; nothing is stored but the
    source field.
    """

    variant = Variant.Q

    def __init__(self, source: DiscreteField, ray_points: int = RAY_POINTS):
        if source.space.mesh is None:
            raise ColumnMismatch("Integral evaluator needs a volume velocity field")
        self.source = source
        self.mesh = source.space.mesh
        self._t, self._w = gauss_legendre(ray_points, 0.0, 1.0)

    def _divergence(self, cells: np.ndarray, lam: np.ndarray) -> np.ndarray:
        _, grads = evaluate(self.source, cells, lam)
        return grads[:, 0, 0] + grads[:, 1, 1]

    def segment_integral(
        self,
        xy: np.ndarray,
        z_lo: np.ndarray,
        z_hi: np.ndarray,
        columns: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """∫_{z_lo}^{z_hi} ∇x·u_h(x, s) ds along each vertical ray.

        Raises:
            RayEscape: If a ray is not fully covered by its column's tets.
        """
        mesh = self.mesh
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        z_lo = np.broadcast_to(np.asarray(z_lo, dtype=float), (len(xy),))
        z_hi = np.broadcast_to(np.asarray(z_hi, dtype=float), (len(xy),))
        if columns is None:
            columns = mesh.surface.locate(xy)
        if np.any(columns < 0):
            raise RayEscape(int(np.count_nonzero(columns < 0)))

        depth = mesh.depth_at(xy, columns)
        sigma_lo = np.clip(-z_lo / depth, 0.0, 1.0)
        deepest = np.clip(
            np.searchsorted(mesh.sigma_levels, sigma_lo, side="left"), 1, mesh.layer_count
        ) - 1
        _, gradlam = mesh.geometry
        total = np.zeros(len(xy))
        covered = np.zeros(len(xy))
        flat = np.column_stack([xy, np.zeros(len(xy))])

        for layer in range(mesh.layer_count):
            active = np.flatnonzero(deepest >= layer - 1)
            if not len(active):
                break
            tets3 = mesh.prism_tets(columns[active], np.full(len(active), layer))
            for s in range(3):
                tets = tets3[:, s]
                base = mesh.barycentric(tets, flat[active])
                g = gradlam[tets, :, 2]
                lo, hi = z_lo[active].copy(), z_hi[active].copy()
                with np.errstate(divide="ignore", invalid="ignore"):
                    bound = -base / g
                up = g > 1e-14
                down = g < -1e-14
                lo = np.maximum(lo, np.where(up, bound, -np.inf).max(axis=1))
                hi = np.minimum(hi, np.where(down, bound, np.inf).min(axis=1))
                flat_ok = np.all(up | down | (base >= -1e-12), axis=1)
                length = np.where(flat_ok, np.maximum(hi - lo, 0.0), 0.0)
                hit = length > 0
                if not hit.any():
                    continue
                idx = active[hit]
                seg_lo, seg_len = lo[hit], length[hit]
                acc = np.zeros(len(idx))
                for t, w in zip(self._t, self._w):
                    z = seg_lo + t * seg_len
                    lam = base[hit] + z[:, None] * g[hit]
                    acc += w * self._divergence(tets[hit], lam)
                total[idx] += acc * seg_len
                covered[idx] += seg_len

        expected = z_hi - z_lo
        gap = np.abs(covered - expected) > 1e-9 * np.maximum(1.0, depth)
        if np.any(gap):
            raise RayEscape(int(np.count_nonzero(gap)))
        return total

    def evaluate(self, points, cells=None):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if cells is None:
            cells = self.mesh.locate(points)
        columns = self.mesh.column_of_tet[cells]
        u3 = self.segment_integral(points[:, :2], points[:, 2], np.zeros(len(points)), columns)
        dz = -self._divergence(cells, self.mesh.barycentric(cells, points))
        return u3, dz

    def quadrature_values(self, cells, rule):
        cells = np.asarray(cells)
        pts = np.einsum("qv,evd->eqd", rule.points, self.mesh.nodes[self.mesh.tets[cells]])
        nq = len(rule)
        flat_cells = np.repeat(cells, nq)
        flat_pts = pts.reshape(-1, 3)
        u3 = self.segment_integral(
            flat_pts[:, :2], flat_pts[:, 2], np.zeros(len(flat_pts)), self.mesh.column_of_tet[flat_cells]
        )
        lam = np.tile(rule.points, (len(cells), 1))
        dz = -self._divergence(flat_cells, lam)
        return u3.reshape(len(cells), nq), dz.reshape(len(cells), nq)


def integral_evaluate(
    ev: IntegralEvaluator, point: np.ndarray, need_derivative: bool = True
) -> Tuple[float, Optional[float]]:
    """u₃ (and ∂z u₃ when asked) at a single point of Ω̄."""
    u3, dz = ev.evaluate(np.asarray(point, dtype=float).reshape(1, 3))
    return float(u3[0]), (float(dz[0]) if need_derivative else None)


def build_evaluator(
    variant: Variant, u_h: DiscreteField, vertical: Optional[VerticalSolver] = None
) -> VerticalEvaluator:
    """Evaluator of the requested scheme variant for u_h."""
    if variant is Variant.Q:
        return IntegralEvaluator(u_h)
    if vertical is None:
        raise ColumnMismatch("The projected variant needs a VerticalSolver")
    return vertical.solve(u_h)
