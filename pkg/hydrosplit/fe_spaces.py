"""
Discrete spaces X_h, Y_h and Q_h.

Volume spaces live on the tets of a ColumnMesh, the pressure space on the
surface triangles. Scalar DOFs are numbered nodes first, then edges (P2) or
tets (bubble); vector spaces block the scalar numbering by component.
Basis functions are written in barycentric coordinates so that gradients
follow from the barycentric gradients of each element.
"""

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse.linalg as spla

from .exceptions import UnsupportedKind, ValidationError
from .mesh import ColumnMesh, SurfaceMesh
from .models import BoundaryTag, ElementKind
from .quadrature import BUBBLE_POINTS, QuadratureRule, tet_rule, triangle_rule

logger = logging.getLogger(__name__)

AnalyticField = Callable[[np.ndarray], np.ndarray]

_LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

_VELOCITY_KINDS = (ElementKind.P2, ElementKind.P1_BUBBLE)
_VERTICAL_KINDS = (ElementKind.P1, ElementKind.P2)


def local_count(kind: ElementKind) -> int:
    """Number of basis functions per element."""
    return {
        ElementKind.P1: 4,
        ElementKind.P2: 10,
        ElementKind.P1_BUBBLE: 5,
        ElementKind.P1_SURFACE: 3,
    }[kind]


def shape_functions(kind: ElementKind, lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Basis values and derivatives with respect to the barycentric coordinates.

    Args:
        kind: Element family.
        lam: Barycentric coordinates, shape (n, 4) (or (n, 3) on triangles).

    Returns:
        ``phi`` of shape (n, nloc) and ``dphi`` of shape (n, nloc, nbary)
        with ``dphi[q, i, k] = ∂φ_i/∂λ_k``.
    """
    lam = np.atleast_2d(lam)
    n, nb = lam.shape
    if kind in (ElementKind.P1, ElementKind.P1_SURFACE):
        return lam.copy(), np.broadcast_to(np.eye(nb), (n, nb, nb)).copy()

    if kind is ElementKind.P2:
        phi = np.empty((n, 10))
        dphi = np.zeros((n, 10, 4))
        for i in range(4):
            phi[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
            dphi[:, i, i] = 4.0 * lam[:, i] - 1.0
        for e, (i, j) in enumerate(_LOCAL_EDGES):
            phi[:, 4 + e] = 4.0 * lam[:, i] * lam[:, j]
            dphi[:, 4 + e, i] = 4.0 * lam[:, j]
            dphi[:, 4 + e, j] = 4.0 * lam[:, i]
        return phi, dphi

    if kind is ElementKind.P1_BUBBLE:
        phi = np.empty((n, 5))
        dphi = np.zeros((n, 5, 4))
        phi[:, :4] = lam
        dphi[:, :4, :] = np.eye(4)
        phi[:, 4] = 256.0 * np.prod(lam, axis=1)
        for k in range(4):
            others = [m for m in range(4) if m != k]
            dphi[:, 4, k] = 256.0 * np.prod(lam[:, others], axis=1)
        return phi, dphi

    raise UnsupportedKind(kind, list(ElementKind))


@dataclass(frozen=True, eq=False)
class FESpace:
    """A Lagrange-type space on a ColumnMesh (volume) or SurfaceMesh (surface).

    ``cell_dofs`` maps each element to its scalar DOFs; the DOF of component
    ``c`` is ``c * scalar_count + scalar_dof``. ``scalar_mask`` flags the
    Dirichlet DOFs of one component.
    """

    kind: ElementKind
    components: int
    surface: SurfaceMesh
    mesh: Optional[ColumnMesh]
    cell_dofs: np.ndarray
    dof_coords: np.ndarray
    scalar_mask: np.ndarray
    constraint: str = "none"
    quadrature: QuadratureRule = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.quadrature is None:
            rule = triangle_rule() if self.is_surface else tet_rule()
            object.__setattr__(self, "quadrature", rule)

    @property
    def is_surface(self) -> bool:
        return self.mesh is None

    @property
    def scalar_count(self) -> int:
        return len(self.dof_coords)

    @property
    def dof_count(self) -> int:
        return self.components * self.scalar_count

    @property
    def local_count(self) -> int:
        return self.cell_dofs.shape[1]

    @property
    def cell_count(self) -> int:
        return len(self.cell_dofs)

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        """Boolean mask over all DOFs (every component)."""
        return np.tile(self.scalar_mask, self.components)

    @cached_property
    def free(self) -> np.ndarray:
        """Indices of the unconstrained DOFs."""
        return np.flatnonzero(~self.dirichlet_mask)

    @cached_property
    def mean_weights(self) -> np.ndarray:
        """∫ φ_i for every scalar DOF (exact with the space quadrature)."""
        phi, _ = shape_functions(self.kind, self.quadrature.points)
        jac = self.jacobians()[0]
        local = np.abs(jac)[:, None] * (self.quadrature.weights @ phi)[None, :]
        return np.bincount(
            self.cell_dofs.ravel(), weights=local.ravel(), minlength=self.scalar_count
        )

    def jacobians(self, cells: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Jacobian determinants and barycentric gradients of ``cells``."""
        if self.is_surface:
            det, gradlam = 2.0 * self.surface.areas, self.surface.gradlam
        else:
            det, gradlam = self.mesh.geometry
        if cells is None:
            return det, gradlam
        return det[cells], gradlam[cells]

    def element_points(self, cells: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Physical coordinates of barycentric points ``lam`` (nq, nb) in ``cells``."""
        if self.is_surface:
            X = self.surface.nodes[self.surface.triangles[cells]]
        else:
            X = self.mesh.nodes[self.mesh.tets[cells]]
        return np.einsum("qv,evd->eqd", lam, X)

    def element_basis(
        self, cells: np.ndarray, rule: Optional[QuadratureRule] = None
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Basis data of a block of elements at the quadrature points.

        Returns:
            ``phi`` (nq, nloc), ``grad`` (ne, nq, nloc, dim), ``wdet``
            (ne, nq) with weights times |det J|, and the physical points
            (ne, nq, dim).
        """
        rule = rule or self.quadrature
        phi, dphi = shape_functions(self.kind, rule.points)
        det, gradlam = self.jacobians(cells)
        grad = np.einsum("qlk,ekd->eqld", dphi, gradlam)
        wdet = np.abs(det)[:, None] * rule.weights[None, :]
        return phi, grad, wdet, self.element_points(cells, rule.points)

    def signature(self) -> str:
        return space_signature(self)


def _face_dof_mask(mesh: ColumnMesh, kind: ElementKind, tags, scalar_count: int) -> np.ndarray:
    selected = np.isin(mesh.face_tags, [t.value for t in tags])
    faces = mesh.faces[selected]
    mask = np.zeros(scalar_count, dtype=bool)
    mask[np.unique(faces)] = True
    if kind is ElementKind.P2 and len(faces):
        edges, _ = mesh.edges
        n = mesh.node_count
        face_edges = np.concatenate([np.sort(faces[:, [a, b]], axis=1) for a, b in ((0, 1), (0, 2), (1, 2))])
        on_face = np.isin(edges[:, 0] * n + edges[:, 1], face_edges[:, 0] * n + face_edges[:, 1])
        mask[mesh.node_count + np.flatnonzero(on_face)] = True
    return mask


def _volume_space(
    mesh: ColumnMesh, kind: ElementKind, components: int, tags
) -> FESpace:
    nn = mesh.node_count
    if kind is ElementKind.P1:
        cell_dofs = mesh.tets.copy()
        coords = mesh.nodes
    elif kind is ElementKind.P2:
        edges, tet_edges = mesh.edges
        cell_dofs = np.hstack([mesh.tets, nn + tet_edges])
        coords = np.vstack([mesh.nodes, 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])])
    else:
        cell_dofs = np.hstack([mesh.tets, nn + np.arange(mesh.tet_count)[:, None]])
        coords = np.vstack([mesh.nodes, mesh.nodes[mesh.tets].mean(axis=1)])
    mask = _face_dof_mask(mesh, kind, tags, len(coords))
    space = FESpace(
        kind=kind,
        components=components,
        surface=mesh.surface,
        mesh=mesh,
        cell_dofs=cell_dofs,
        dof_coords=coords,
        scalar_mask=mask,
        quadrature=tet_rule(BUBBLE_POINTS) if kind is ElementKind.P1_BUBBLE else None,
    )
    logger.debug(
        "%s space with %d component(s): %d DOFs, %d constrained",
        kind.value, components, space.dof_count, int(space.dirichlet_mask.sum()),
    )
    return space


def build_velocity_space(mesh: ColumnMesh, kind: ElementKind) -> FESpace:
    """Horizontal velocity space X_h (two components, zero on Γ_b ∪ Γ_l).

    Raises:
        UnsupportedKind: Unless ``kind`` is P2 or P1_BUBBLE.
    """
    if kind not in _VELOCITY_KINDS:
        raise UnsupportedKind(kind, _VELOCITY_KINDS)
    return _volume_space(mesh, kind, 2, (BoundaryTag.BOTTOM, BoundaryTag.LATERAL))


def build_vertical_space(mesh: ColumnMesh, kind: ElementKind) -> FESpace:
    """Vertical velocity space Y_h (scalar, zero on Γ_s ∪ Γ_b).

    Raises:
        UnsupportedKind: Unless ``kind`` is P1 or P2.
    """
    if kind not in _VERTICAL_KINDS:
        raise UnsupportedKind(kind, _VERTICAL_KINDS)
    return _volume_space(mesh, kind, 1, (BoundaryTag.SURFACE, BoundaryTag.BOTTOM))


def build_pressure_space(sm: SurfaceMesh) -> FESpace:
    """Surface pressure space Q_h: continuous P1 with zero mean over S."""
    return FESpace(
        kind=ElementKind.P1_SURFACE,
        components=1,
        surface=sm,
        mesh=None,
        cell_dofs=sm.triangles.copy(),
        dof_coords=sm.nodes,
        scalar_mask=np.zeros(sm.node_count, dtype=bool),
        constraint="zero_mean",
    )


@dataclass
class DiscreteField:
    """Coefficient vector of a space at a time label."""

    space: FESpace
    coefficients: np.ndarray
    time_label: float = 0.0

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dof_count,):
            raise ValidationError(
                f"Field has {self.coefficients.size} coefficients, space has {self.space.dof_count} DOFs"
            )

    @classmethod
    def zeros(cls, space: FESpace, time_label: float = 0.0) -> "DiscreteField":
        return cls(space, np.zeros(space.dof_count), time_label)

    def component(self, c: int) -> np.ndarray:
        n = self.space.scalar_count
        return self.coefficients[c * n : (c + 1) * n]

    def with_coefficients(
        self, coefficients: np.ndarray, time_label: Optional[float] = None
    ) -> "DiscreteField":
        return DiscreteField(
            self.space, coefficients, self.time_label if time_label is None else time_label
        )

    def copy(self) -> "DiscreteField":
        return DiscreteField(self.space, self.coefficients.copy(), self.time_label)


def interpolate(space: FESpace, fn: AnalyticField, time_label: float = 0.0) -> DiscreteField:
    """Nodal interpolant of ``fn``; bubble coefficients are set to 0.

    ``fn`` takes points of shape (n, 3) (or (n, 2) on the surface) and
    returns (n,) values, or (n, components) for vector spaces. The Dirichlet
    mask is not applied.
    """
    coords = space.dof_coords
    if space.kind is ElementKind.P1_BUBBLE:
        coords = coords[: space.mesh.node_count]
    values = np.asarray(fn(coords), dtype=float).reshape(len(coords), -1)
    if values.shape[1] != space.components:
        raise ValidationError(
            f"Field returns {values.shape[1]} component(s), space has {space.components}"
        )
    out = np.zeros((space.components, space.scalar_count))
    out[:, : len(coords)] = values.T
    return DiscreteField(space, out.ravel(), time_label)


def apply_mask(field: DiscreteField) -> DiscreteField:
    """Copy of ``field`` with every Dirichlet DOF set to 0."""
    coeffs = field.coefficients.copy()
    coeffs[field.space.dirichlet_mask] = 0.0
    return field.with_coefficients(coeffs)


def zero_mean(field: DiscreteField) -> DiscreteField:
    """L²(S)-orthogonal projection onto zero-mean functions.

    Subtracts the constant (∫p)/|S|; for Lagrange spaces the constant 1 has
    all coefficients equal to 1.
    """
    w = field.space.mean_weights
    n = field.space.scalar_count
    coeffs = field.coefficients.copy()
    for c in range(field.space.components):
        part = coeffs[c * n : (c + 1) * n]
        part -= float(w @ part) / float(w.sum())
    return field.with_coefficients(coeffs)


def field_mean(field: DiscreteField) -> float:
    """Quadrature integral of a scalar field divided by the domain measure."""
    w = field.space.mean_weights
    return float(w @ field.component(0)) / float(w.sum())


def evaluate(
    field: DiscreteField, cells: np.ndarray, lam: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Values (n, components) and gradients (n, components, dim) at points.

    Args:
        field: Field to evaluate.
        cells: Element of each point, shape (n,).
        lam: Barycentric coordinates of each point in its element.
    """
    space = field.space
    cells = np.asarray(cells)
    phi, dphi = shape_functions(space.kind, lam)
    _, gradlam = space.jacobians(cells)
    gphi = np.einsum("nlk,nkd->nld", dphi, gradlam)
    coeff = field.coefficients.reshape(space.components, space.scalar_count)
    local = coeff[:, space.cell_dofs[cells]]
    values = np.einsum("cnl,nl->nc", local, phi)
    grads = np.einsum("cnl,nld->ncd", local, gphi)
    return values, grads


def evaluate_at(field: DiscreteField, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Values and gradients at physical points (located on the mesh)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    space = field.space
    if space.is_surface:
        cells = space.surface.locate(points)
        if np.any(cells < 0):
            raise ValidationError("Point outside the surface domain")
        lam = space.surface.barycentric(cells, points)
    else:
        cells = space.mesh.locate(points)
        lam = space.mesh.barycentric(cells, points)
    return evaluate(field, cells, lam)


def quadrature_values(
    field: DiscreteField, cells: np.ndarray, rule: Optional[QuadratureRule] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Values (ne, nq, c) and gradients (ne, nq, c, dim) at the quadrature points of ``cells``."""
    space = field.space
    phi, grad, _, _ = space.element_basis(cells, rule)
    coeff = field.coefficients.reshape(space.components, space.scalar_count)
    local = coeff[:, space.cell_dofs[cells]]
    values = np.einsum("cel,ql->eqc", local, phi)
    grads = np.einsum("cel,eqld->eqcd", local, grad)
    return values, grads


def space_signature(space: FESpace) -> str:
    """sha256 hex digest identifying the space and its mesh."""
    digest = hashlib.sha256()
    digest.update(f"{space.kind.value}:{space.components}:{space.dof_count}".encode())
    digest.update(np.ascontiguousarray(space.surface.nodes).tobytes())
    digest.update(np.ascontiguousarray(space.cell_dofs).tobytes())
    if space.mesh is not None:
        digest.update(np.ascontiguousarray(space.mesh.nodes).tobytes())
    return digest.hexdigest()


def inverse_inequality_constant(
    space: FESpace, rng: Optional[np.random.Generator] = None, samples: int = 8
) -> Tuple[float, float]:
    """Measured constant C of |v_h|₁ ≤ C h⁻¹ ‖v_h‖ on one scalar component.

    Returns:
        ``(h·sqrt(λ_max(K, M)), best random lower bound)``.
    """
    from .assembly import assemble_mass, assemble_stiffness

    scalar = _scalar_view(space)
    M = assemble_mass(scalar).tocsc()
    K = assemble_stiffness(scalar).tocsc()
    h = scalar.mesh.h if scalar.mesh is not None else scalar.surface.h
    # the constant lies in the kernel of K, so start Lanczos off it
    v0 = np.random.default_rng(0).standard_normal(M.shape[0])
    lam_max = spla.eigsh(K, k=1, M=M, which="LA", v0=v0, return_eigenvectors=False)[0]
    bound = 0.0
    if rng is not None:
        for _ in range(samples):
            v = rng.standard_normal(M.shape[0])
            bound = max(bound, h * float(np.sqrt((v @ (K @ v)) / (v @ (M @ v)))))
    return h * float(np.sqrt(lam_max)), bound


def _scalar_view(space: FESpace) -> FESpace:
    if space.components == 1:
        return space
    return FESpace(
        kind=space.kind,
        components=1,
        surface=space.surface,
        mesh=space.mesh,
        cell_dofs=space.cell_dofs,
        dof_coords=space.dof_coords,
        scalar_mask=space.scalar_mask,
        constraint=space.constraint,
        quadrature=space.quadrature,
    )
