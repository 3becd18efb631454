"""
Tests for the projected and column-integral vertical velocity.
"""

import numpy as np
import pytest

from hydrosplit.assembly import assemble_zstiffness
from hydrosplit.exceptions import ColumnMismatch, RayEscape
from hydrosplit.fe_spaces import DiscreteField, apply_mask, evaluate_at, interpolate, quadrature_values
from hydrosplit.models import ElementPair, SolverConfig, SolverMethod, Variant
from hydrosplit.quadrature import gauss_legendre
from hydrosplit.stepper import DiscreteSpaces
from hydrosplit.utils import mass_norm
from hydrosplit.vertical_velocity import (
    IntegralEvaluator,
    ProjectedEvaluator,
    VerticalSolver,
    build_evaluator,
    integral_evaluate,
    solve_substep0,
)


def _zero_flux(p):
    # ∇x·u = z + 1/2 has zero vertical mean on D = 1
    return np.column_stack([p[:, 0] * (p[:, 2] + 0.5), np.zeros(len(p))])


def _zero_flux_u3(p):
    z = p[:, 2]
    return -z * (z + 1.0) / 2.0


def _interior_points(rng, n, depth=lambda xy: 1.0):
    xy = rng.uniform(0.02, 0.98, size=(n, 2))
    z = -rng.uniform(0.0, 1.0, n) * np.array([depth(p) for p in xy])
    return np.column_stack([xy, z])


def _divergence_norm(u, space):
    cells = np.arange(space.cell_count)
    _, _, wdet, _ = space.element_basis(cells)
    _, grads = quadrature_values(u, cells)
    div = grads[..., 0, 0] + grads[..., 1, 1]
    return float(np.sqrt(np.einsum("eq,eq->", wdet, div**2)))


class TestProjected:
    """Test the z-elliptic Sub-step 0."""

    def test_exact_for_quadratic_u3(self, th_spaces, rng):
        """Test u₃ is recovered exactly when it lies in Y_h."""
        u = interpolate(th_spaces.Xh, _zero_flux)
        ev = solve_substep0(u, th_spaces.Yh)
        pts = _interior_points(rng, 12)
        values, dz = ev.evaluate(pts)
        np.testing.assert_allclose(values, _zero_flux_u3(pts), atol=1e-12)
        np.testing.assert_allclose(dz, -(pts[:, 2] + 0.5), atol=1e-11)
        assert ev.variant is Variant.R

    @pytest.mark.parametrize("spaces", ["th_quarter", "mini_spaces"])
    def test_substep0_bound(self, spaces, request, rng):
        """Test |∂z u₃| ≤ |∇x·u| for 20 random horizontal fields."""
        sp_ = request.getfixturevalue(spaces)
        solver = VerticalSolver(sp_.Yh, sp_.Xh)
        Kz = assemble_zstiffness(sp_.Yh)
        for _ in range(20):
            u = apply_mask(DiscreteField(sp_.Xh, rng.standard_normal(sp_.Xh.dof_count)))
            ev = solver.solve(u)
            assert mass_norm(Kz, ev.field.coefficients) <= _divergence_norm(u, sp_.Xh) + 1e-10
            assert ev.residual < 1e-10

    def test_iterative_matches_direct(self, th_spaces, rng):
        """Test CG and the cached LU give the same u₃."""
        u = apply_mask(DiscreteField(th_spaces.Xh, rng.standard_normal(th_spaces.Xh.dof_count)))
        direct = VerticalSolver(th_spaces.Yh, th_spaces.Xh).solve(u)
        cg = VerticalSolver(
            th_spaces.Yh, th_spaces.Xh, SolverConfig(method=SolverMethod.UZAWA, tol=1e-12)
        ).solve(u)
        np.testing.assert_allclose(cg.field.coefficients, direct.field.coefficients, atol=1e-8)

    def test_zero_field(self, th_spaces):
        """Test a zero field short-circuits to zero."""
        ev = VerticalSolver(th_spaces.Yh, th_spaces.Xh).solve(DiscreteField.zeros(th_spaces.Xh, 0.25))
        assert not ev.field.coefficients.any()
        assert ev.field.time_label == 0.25

    def test_cells_argument(self, th_spaces):
        """Test evaluation with known cells skips the point search."""
        ev = solve_substep0(interpolate(th_spaces.Xh, _zero_flux), th_spaces.Yh)
        mesh = th_spaces.mesh
        pts = mesh.nodes[mesh.tets[:4]].mean(axis=1)
        a, _ = ev.evaluate(pts, cells=np.arange(4))
        b, _ = ev.evaluate(pts)
        np.testing.assert_allclose(a, b, atol=1e-14)


class TestIntegral:
    """Test the exact column integral."""

    def test_exact_for_quadratic_u3(self, th_spaces, rng):
        """Test the integral reproduces the analytic vertical velocity."""
        ev = IntegralEvaluator(interpolate(th_spaces.Xh, _zero_flux))
        pts = _interior_points(rng, 12)
        values, dz = ev.evaluate(pts)
        np.testing.assert_allclose(values, _zero_flux_u3(pts), atol=1e-13)
        np.testing.assert_allclose(dz, -(pts[:, 2] + 0.5), atol=1e-12)

    def test_sloped_bottom(self, sloped_mesh, rng):
        """Test u₃ = −z for ∇x·u = 1 on D = 1 + x/4."""
        spaces = DiscreteSpaces.build(sloped_mesh, ElementPair.TAYLOR_HOOD)
        u = interpolate(spaces.Xh, lambda p: np.column_stack([p[:, 0], np.zeros(len(p))]))
        ev = IntegralEvaluator(u)
        pts = _interior_points(rng, 10, depth=lambda xy: 1.0 + xy[0] / 4.0)
        values, _ = ev.evaluate(pts)
        np.testing.assert_allclose(values, -pts[:, 2], atol=1e-13)

    def test_matches_piecewise_ray_quadrature(self, mini_spaces, rng):
        """Test random fields against Gauss rules between the face crossings of each ray."""
        u = apply_mask(DiscreteField(mini_spaces.Xh, rng.standard_normal(mini_spaces.Xh.dof_count)))
        mesh = mini_spaces.mesh
        ev = IntegralEvaluator(u)
        _, gradlam = mesh.geometry
        for p in _interior_points(rng, 4):
            col = mesh.surface.locate(p[None, :2])[0]
            tets = mesh.prism_tets(np.full(mesh.layer_count, col), np.arange(mesh.layer_count)).ravel()
            top = np.tile([p[0], p[1], 0.0], (len(tets), 1))
            with np.errstate(divide="ignore", invalid="ignore"):
                crossings = -mesh.barycentric(tets, top) / gradlam[tets, :, 2]
            inside = np.isfinite(crossings) & (crossings > p[2]) & (crossings < 0.0)
            breaks = np.unique(np.concatenate([[p[2], 0.0], crossings[inside]]))
            total = 0.0
            for a, b in zip(breaks[:-1], breaks[1:]):
                if b - a < 1e-12:
                    continue
                zs, ws = gauss_legendre(3, a, b)
                _, grads = evaluate_at(u, np.column_stack([np.tile(p[:2], (3, 1)), zs]))
                total += ws @ (grads[:, 0, 0] + grads[:, 1, 1])
            value, _ = integral_evaluate(ev, p)
            assert value == pytest.approx(total, rel=1e-10, abs=1e-12)

    def test_dz_is_minus_divergence(self, th_spaces, rng):
        """Test ∂z u₃ = −∇x·u at quadrature points."""
        u = DiscreteField(th_spaces.Xh, rng.standard_normal(th_spaces.Xh.dof_count))
        ev = IntegralEvaluator(u)
        cells = np.arange(6)
        _, dz = ev.quadrature_values(cells, th_spaces.Xh.quadrature)
        _, grads = quadrature_values(u, cells)
        np.testing.assert_allclose(dz, -(grads[..., 0, 0] + grads[..., 1, 1]), atol=1e-12)

    def test_vanishes_at_surface(self, th_spaces, rng):
        """Test u₃ = 0 on the rigid lid."""
        u = DiscreteField(th_spaces.Xh, rng.standard_normal(th_spaces.Xh.dof_count))
        value, dz = integral_evaluate(IntegralEvaluator(u), np.array([0.3, 0.6, 0.0]), need_derivative=False)
        assert value == 0.0 and dz is None

    def test_segment_additivity(self, th_spaces, rng):
        """Test integrals over adjacent segments add up."""
        u = DiscreteField(th_spaces.Xh, rng.standard_normal(th_spaces.Xh.dof_count))
        ev = IntegralEvaluator(u)
        xy = np.array([[0.37, 0.61]])
        whole = ev.segment_integral(xy, -0.9, 0.0)
        parts = ev.segment_integral(xy, -0.9, -0.35) + ev.segment_integral(xy, -0.35, 0.0)
        np.testing.assert_allclose(whole, parts, atol=1e-13)

    def test_ray_outside(self, th_spaces):
        """Test rays outside S or below the bottom raise RayEscape."""
        ev = IntegralEvaluator(DiscreteField.zeros(th_spaces.Xh))
        with pytest.raises(RayEscape):
            ev.segment_integral(np.array([[1.5, 0.5]]), -0.5, 0.0)
        with pytest.raises(RayEscape):
            ev.segment_integral(np.array([[0.5, 0.5]]), -1.5, 0.0)

    def test_agrees_with_projection(self, th_spaces, rng):
        """Test both variants agree when u₃ lies in Y_h."""
        u = interpolate(th_spaces.Xh, _zero_flux)
        q = IntegralEvaluator(u).quadrature_values(np.arange(10), th_spaces.Xh.quadrature)[0]
        r = solve_substep0(u, th_spaces.Yh).quadrature_values(np.arange(10), th_spaces.Xh.quadrature)[0]
        np.testing.assert_allclose(q, r, atol=1e-12)


class TestBuildEvaluator:
    """Test variant dispatch."""

    def test_variants(self, th_spaces):
        """Test Q builds an integral evaluator and R a projected one."""
        u = DiscreteField.zeros(th_spaces.Xh)
        assert isinstance(build_evaluator(Variant.Q, u), IntegralEvaluator)
        solver = VerticalSolver(th_spaces.Yh, th_spaces.Xh)
        assert isinstance(build_evaluator(Variant.R, u, solver), ProjectedEvaluator)

    def test_r_needs_solver(self, th_spaces):
        """Test the projected variant requires a VerticalSolver."""
        with pytest.raises(ColumnMismatch):
            build_evaluator(Variant.R, DiscreteField.zeros(th_spaces.Xh))

    def test_surface_field_rejected(self, th_spaces):
        """Test the integral evaluator needs a volume field."""
        with pytest.raises(ColumnMismatch):
            IntegralEvaluator(DiscreteField.zeros(th_spaces.Qh))
