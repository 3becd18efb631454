"""
Tests for the finite element spaces and discrete fields.
"""

import numpy as np
import pytest

from hydrosplit.exceptions import UnsupportedKind, ValidationError
from hydrosplit.fe_spaces import (
    DiscreteField,
    apply_mask,
    build_pressure_space,
    build_velocity_space,
    build_vertical_space,
    evaluate,
    evaluate_at,
    field_mean,
    interpolate,
    inverse_inequality_constant,
    local_count,
    shape_functions,
    space_signature,
    zero_mean,
)
from hydrosplit.models import ElementKind

VERTICES = np.eye(4)
EDGE_MIDPOINTS = np.array(
    [(VERTICES[a] + VERTICES[b]) / 2 for a, b in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))]
)


def _on_walls(points):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    return np.isclose(x, 0) | np.isclose(x, 1) | np.isclose(y, 0) | np.isclose(y, 1) | np.isclose(z, -1)


class TestShapeFunctions:
    """Test local bases in barycentric coordinates."""

    def test_p2_nodal(self):
        """Test P2 functions are Kronecker deltas at vertices and edge midpoints."""
        phi, _ = shape_functions(ElementKind.P2, np.vstack([VERTICES, EDGE_MIDPOINTS]))
        np.testing.assert_allclose(phi, np.eye(10), atol=1e-15)

    def test_p2_partition_of_unity(self, rng):
        """Test P2 functions sum to one with zero derivative along the simplex."""
        lam = rng.dirichlet(np.ones(4), size=20)
        phi, dphi = shape_functions(ElementKind.P2, lam)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-14)
        # tangent directions of the simplex: e_k − e_0
        total = dphi.sum(axis=1)
        np.testing.assert_allclose(total[:, 1:] - total[:, :1], 0.0, atol=1e-13)

    def test_bubble(self):
        """Test the bubble is one at the centroid and zero on faces."""
        lam = np.array([[0.25] * 4, [0.0, 0.3, 0.3, 0.4]])
        phi, dphi = shape_functions(ElementKind.P1_BUBBLE, lam)
        assert phi[0, 4] == pytest.approx(1.0)
        assert phi[1, 4] == 0.0
        np.testing.assert_allclose(phi[:, :4].sum(axis=1), 1.0)
        assert dphi[0, 4, 0] == pytest.approx(256.0 / 64.0)

    def test_local_counts(self):
        """Test local dimensions."""
        assert [local_count(k) for k in ElementKind] == [4, 10, 5, 3]


class TestSpaces:
    """Test DOF layout and boundary masks."""

    def test_p2_dofs(self, coarse_mesh):
        """Test P2 has one DOF per node and per edge, blocked by component."""
        Xh = build_velocity_space(coarse_mesh, ElementKind.P2)
        edges, _ = coarse_mesh.edges
        assert Xh.scalar_count == coarse_mesh.node_count + len(edges)
        assert Xh.dof_count == 2 * Xh.scalar_count
        assert Xh.local_count == 10

    def test_bubble_dofs(self, coarse_mesh):
        """Test the bubble adds one DOF per tet, never constrained."""
        Xh = build_velocity_space(coarse_mesh, ElementKind.P1_BUBBLE)
        assert Xh.scalar_count == coarse_mesh.node_count + coarse_mesh.tet_count
        assert not Xh.scalar_mask[coarse_mesh.node_count:].any()

    @pytest.mark.parametrize("kind", [ElementKind.P2, ElementKind.P1_BUBBLE])
    def test_velocity_mask(self, coarse_mesh, kind):
        """Test X_h vanishes exactly on the bottom and lateral walls."""
        Xh = build_velocity_space(coarse_mesh, kind)
        n = coarse_mesh.node_count if kind is ElementKind.P1_BUBBLE else Xh.scalar_count
        coords = Xh.dof_coords[:n]
        np.testing.assert_array_equal(Xh.scalar_mask[:n], _on_walls(coords))

    def test_vertical_mask(self, coarse_mesh):
        """Test Y_h vanishes on the surface and the bottom only."""
        Yh = build_vertical_space(coarse_mesh, ElementKind.P2)
        z = Yh.dof_coords[:, 2]
        np.testing.assert_array_equal(Yh.scalar_mask, np.isclose(z, 0) | np.isclose(z, -1))

    def test_pressure_space(self, coarse_mesh):
        """Test Q_h is unconstrained surface P1 with the zero-mean side condition."""
        Qh = build_pressure_space(coarse_mesh.surface)
        assert Qh.is_surface and Qh.dof_count == 9
        assert Qh.constraint == "zero_mean"
        assert Qh.mean_weights.sum() == pytest.approx(1.0)

    def test_unsupported_kinds(self, coarse_mesh):
        """Test kinds outside each space's family are rejected."""
        with pytest.raises(UnsupportedKind):
            build_velocity_space(coarse_mesh, ElementKind.P1)
        with pytest.raises(UnsupportedKind):
            build_vertical_space(coarse_mesh, ElementKind.P1_BUBBLE)

    def test_signature(self, th_spaces, mini_spaces):
        """Test signatures are stable and distinguish spaces."""
        assert space_signature(th_spaces.Xh) == th_spaces.Xh.signature()
        assert len(space_signature(th_spaces.Xh)) == 64
        assert space_signature(th_spaces.Xh) != space_signature(mini_spaces.Xh)


class TestDiscreteField:
    """Test fields, interpolation and evaluation."""

    def test_shape_checked(self, th_spaces):
        """Test a wrong coefficient count is rejected."""
        with pytest.raises(ValidationError):
            DiscreteField(th_spaces.Xh, np.zeros(3))

    def test_p2_reproduces_quadratics(self, th_spaces, rng):
        """Test P2 interpolation is exact for quadratic fields."""

        def fn(p):
            x, y, z = p[:, 0], p[:, 1], p[:, 2]
            return np.column_stack([x * y + z * z, x - 2 * y * z])

        field = interpolate(th_spaces.Xh, fn)
        pts = np.column_stack([rng.uniform(0, 1, (15, 2)), -rng.uniform(0, 1, 15)])
        values, grads = evaluate_at(field, pts)
        np.testing.assert_allclose(values, fn(pts), atol=1e-12)
        np.testing.assert_allclose(grads[:, 0, 2], 2 * pts[:, 2], atol=1e-11)

    def test_bubble_interpolation_zero(self, mini_spaces):
        """Test interpolation leaves bubble coefficients at zero."""
        field = interpolate(mini_spaces.Xh, lambda p: np.column_stack([p[:, 0], p[:, 1]]))
        n = mini_spaces.mesh.node_count
        assert not field.component(0)[n:].any()

    def test_component_count_checked(self, th_spaces):
        """Test a scalar function cannot fill a vector space."""
        with pytest.raises(ValidationError):
            interpolate(th_spaces.Xh, lambda p: p[:, 0])

    def test_apply_mask(self, th_spaces):
        """Test masking zeroes the Dirichlet DOFs only."""
        field = DiscreteField(th_spaces.Xh, np.ones(th_spaces.Xh.dof_count))
        masked = apply_mask(field)
        assert not masked.coefficients[th_spaces.Xh.dirichlet_mask].any()
        assert np.all(masked.coefficients[th_spaces.Xh.free] == 1.0)

    def test_zero_mean(self, th_spaces):
        """Test the projection removes the mean and keeps gradients."""
        p = interpolate(th_spaces.Qh, lambda xy: 3.0 + xy[:, 0])
        q = zero_mean(p)
        assert field_mean(q) == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(np.diff(q.coefficients), np.diff(p.coefficients))

    def test_evaluate_linear_gradient(self, th_spaces):
        """Test the gradient of an interpolated linear function is exact."""
        field = interpolate(th_spaces.Yh, lambda p: 2 * p[:, 0] - p[:, 2])
        _, grads = evaluate(field, np.arange(5), np.full((5, 4), 0.25))
        np.testing.assert_allclose(grads[:, 0], np.tile([2.0, 0.0, -1.0], (5, 1)), atol=1e-12)

    def test_copy_is_independent(self, th_spaces):
        """Test copies do not share coefficients."""
        field = DiscreteField.zeros(th_spaces.Qh, 0.5)
        dup = field.copy()
        dup.coefficients[0] = 1.0
        assert field.coefficients[0] == 0.0 and dup.time_label == 0.5


class TestInverseInequality:
    """Test the measured inverse-inequality constant."""

    def test_bounds_random_fields(self, th_spaces, rng):
        """Test the eigenvalue bound dominates random Rayleigh quotients."""
        constant, lower = inverse_inequality_constant(th_spaces.Xh, rng)
        assert 0 < lower <= constant * (1 + 1e-8)
