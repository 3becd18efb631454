"""
Sparse assembly of the forms of the splitting scheme.

Element loops are vectorized over fixed-size chunks of elements. Chunks may
run on a thread pool; their triplets are concatenated in chunk order so the
assembled values do not depend on the number of workers.
"""

import logging
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import ColumnMismatch, EvaluatorDomain
from .fe_spaces import DiscreteField, FESpace, _scalar_view, quadrature_values, shape_functions
from .mesh import SurfaceMesh
from .models import BoundaryTag, DataSampling
from .quadrature import gauss_legendre, triangle_rule
from .utils import chunk_ranges, ordered_map

logger = logging.getLogger(__name__)

# Analytic data: points (n, dim) and time -> values (n,) or (n, components).
TimeField = Callable[[np.ndarray, float], np.ndarray]
LocalKernel = Callable[[np.ndarray], np.ndarray]


def _chunks(space: FESpace) -> List[np.ndarray]:
    return [np.arange(a, b) for a, b in chunk_ranges(space.cell_count)]


def _assemble_pair(
    row_space: FESpace,
    col_space: FESpace,
    kernel: LocalKernel,
    workers: int = 1,
    row_dofs: Optional[np.ndarray] = None,
) -> sp.csr_matrix:
    """Scalar operator from local matrices ``kernel(cells)`` of shape (ne, nr, nc)."""
    rows_map = row_space.cell_dofs if row_dofs is None else row_dofs

    def block(cells: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        local = kernel(cells)
        r = rows_map[cells]
        c = col_space.cell_dofs[cells]
        nr, nc = local.shape[1], local.shape[2]
        rows = np.repeat(r, nc, axis=1).reshape(-1)
        cols = np.tile(c, (1, nr)).reshape(-1)
        return rows, cols, local.reshape(-1)

    parts = ordered_map(block, _chunks(col_space), workers)
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    shape = (row_space.scalar_count, col_space.scalar_count)
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    matrix.sum_duplicates()
    return matrix


def _assemble_vector(space: FESpace, kernel: LocalKernel, workers: int = 1) -> np.ndarray:
    """Scalar load from local vectors ``kernel(cells)`` of shape (ne, nloc)."""

    def block(cells: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return space.cell_dofs[cells].reshape(-1), kernel(cells).reshape(-1)

    parts = ordered_map(block, _chunks(space), workers)
    idx = np.concatenate([p[0] for p in parts])
    vals = np.concatenate([p[1] for p in parts])
    return np.bincount(idx, weights=vals, minlength=space.scalar_count)


def _blocked(scalar: sp.spmatrix, components: int) -> sp.csr_matrix:
    return sp.block_diag([scalar] * components, format="csr")


def _same_surface(a: SurfaceMesh, b: SurfaceMesh) -> bool:
    if a is b:
        return True
    return (
        a.nodes.shape == b.nodes.shape
        and a.triangles.shape == b.triangles.shape
        and np.array_equal(a.nodes, b.nodes)
        and np.array_equal(a.triangles, b.triangles)
    )


def _require_same_mesh(a: FESpace, b: FESpace) -> None:
    if not _same_surface(a.surface, b.surface):
        raise ColumnMismatch()
    if a.mesh is not None and b.mesh is not None and a.mesh is not b.mesh:
        if a.mesh.tets.shape != b.mesh.tets.shape or not np.array_equal(a.mesh.tets, b.mesh.tets):
            raise ColumnMismatch()


def assemble_mass(space: FESpace, workers: int = 1) -> sp.csr_matrix:
    """(φ_j, φ_i) blocked by component."""

    def kernel(cells):
        phi, _, wdet, _ = space.element_basis(cells)
        return np.einsum("eq,qi,qj->eij", wdet, phi, phi)

    scalar = _assemble_pair(space, space, kernel, workers)
    logger.debug("mass: %d x %d, nnz=%d", scalar.shape[0], scalar.shape[1], scalar.nnz)
    return _blocked(scalar, space.components)


def assemble_surface_mass(Qh: FESpace, workers: int = 1) -> sp.csr_matrix:
    """P1 mass matrix on S."""
    return assemble_mass(Qh, workers)


def assemble_stiffness(space: FESpace, workers: int = 1) -> sp.csr_matrix:
    """(∇φ_j, ∇φ_i) blocked by component."""

    def kernel(cells):
        _, grad, wdet, _ = space.element_basis(cells)
        return np.einsum("eq,eqid,eqjd->eij", wdet, grad, grad)

    return _blocked(_assemble_pair(space, space, kernel, workers), space.components)


def assemble_zstiffness(Yh: FESpace, workers: int = 1) -> sp.csr_matrix:
    """(∂z ψ_j, ∂z ψ_i) on a scalar space."""

    def kernel(cells):
        _, grad, wdet, _ = Yh.element_basis(cells)
        return np.einsum("eq,eqi,eqj->eij", wdet, grad[..., 2], grad[..., 2])

    return _assemble_pair(Yh, Yh, kernel, workers)


def assemble_zcoupling(Yh: FESpace, Xh: FESpace, workers: int = 1) -> sp.csr_matrix:
    """Map of X_h coefficients to the Y_h duals −(∇x·u_h, ∂z y_h)."""
    _require_same_mesh(Yh, Xh)
    rule = Xh.quadrature
    blocks = []
    for c in range(Xh.components):

        def kernel(cells, c=c):
            _, gx, wdet, _ = Xh.element_basis(cells, rule)
            _, gy, _, _ = Yh.element_basis(cells, rule)
            return -np.einsum("eq,eqi,eqj->eij", wdet, gy[..., 2], gx[..., c])

        blocks.append(_assemble_pair(Yh, Xh, kernel, workers))
    return sp.hstack(blocks, format="csr")


def _lifted_pressure_rows(Xh: FESpace) -> np.ndarray:
    return Xh.mesh.node_surface[Xh.mesh.tets]


def assemble_divergence(Qh: FESpace, Xh: FESpace, workers: int = 1) -> sp.csr_matrix:
    """B with entries ∫_Ω q_i(x) ∇x·v_j, i.e. (q_i, ∇x·⟨v_j⟩)_S for v_j ∈ X_h.

    q_i is lifted to Ω as a function constant along verticals; on each tet it
    is the sum of the barycentric coordinates of the vertices lying under
    surface node i.

    Raises:
        ColumnMismatch: If Q_h is not built on the surface of X_h's mesh.
    """
    if Xh.mesh is None or not Qh.is_surface:
        raise ColumnMismatch("Divergence needs a surface space and a volume space")
    _require_same_mesh(Qh, Xh)
    rows = _lifted_pressure_rows(Xh)
    blocks = []
    for c in range(Xh.components):

        def kernel(cells, c=c):
            _, grad, wdet, _ = Xh.element_basis(cells)
            lam = Xh.quadrature.points
            return np.einsum("eq,qv,eqj->evj", wdet, lam, grad[..., c])

        blocks.append(_assemble_pair(Qh, Xh, kernel, workers, row_dofs=rows))
    B = sp.hstack(blocks, format="csr")
    logger.debug("divergence: %d x %d, nnz=%d", B.shape[0], B.shape[1], B.nnz)
    return B


def assemble_convection(
    u_h: DiscreteField, u3, Xh: FESpace, workers: int = 1
) -> sp.csr_matrix:
    """Skew-symmetric convection operator C(U) for U = (u_h, u3).

    The first form (U·∇φ_j, φ_i) + ½(∇·U φ_j, φ_i) is assembled and its
    antisymmetric part returned, so vᵀC(U)v vanishes for every v and every
    U. Both agree whenever the quadrature integrates the form exactly and
    u3 vanishes on Γ_s.

    Args:
        u_h: Advecting horizontal velocity (any velocity space on the mesh).
        u3: Vertical velocity evaluator exposing ``quadrature_values(cells, rule)``
            that returns (u3, ∂z u3) with shape (ne, nq).
        Xh: Space of the advected velocity.

    Raises:
        EvaluatorDomain: If the evaluator returns non-finite values.
    """
    _require_same_mesh(u_h.space, Xh)

    def kernel(cells):
        phi, grad, wdet, _ = Xh.element_basis(cells)
        U, dU = quadrature_values(u_h, cells, Xh.quadrature)
        w3, dz_w3 = u3.quadrature_values(cells, Xh.quadrature)
        if not (np.all(np.isfinite(w3)) and np.all(np.isfinite(dz_w3))):
            raise EvaluatorDomain(
                "Vertical velocity is not finite at some quadrature point",
                details={"cells": int(len(cells))},
            )
        vel = np.concatenate([U, w3[..., None]], axis=2)
        div = dU[..., 0, 0] + dU[..., 1, 1] + dz_w3
        adv = np.einsum("eqd,eqjd->eqj", vel, grad)
        first = np.einsum("eq,qi,eqj->eij", wdet, phi, adv)
        first += 0.5 * np.einsum("eq,eq,qi,qj->eij", wdet, div, phi, phi)
        return first

    C1 = _assemble_pair(Xh, Xh, kernel, workers)
    C = (0.5 * (C1 - C1.T)).tocsr()
    return _blocked(C, Xh.components)


def assemble_coriolis(Xh: FESpace, f_cor: float, workers: int = 1) -> sp.csr_matrix:
    """B_c with wᵀB_c v = f_cor ∫ v^⊥·w, v^⊥ = (−v₂, v₁)."""
    n = Xh.scalar_count
    if f_cor == 0.0:
        return sp.csr_matrix((2 * n, 2 * n))
    M = assemble_mass(_scalar_view(Xh), workers)
    return (f_cor * sp.bmat([[None, -M], [M, None]], format="csr")).tocsr()


def assemble_source(space: FESpace, fn: Callable[[np.ndarray], np.ndarray], workers: int = 1) -> np.ndarray:
    """(fn, φ_i) for an analytic field on the space's domain."""
    nc = space.components

    def for_component(c: int) -> np.ndarray:
        def kernel(cells):
            phi, _, wdet, pts = space.element_basis(cells)
            vals = np.asarray(fn(pts.reshape(-1, pts.shape[-1])), dtype=float)
            vals = vals.reshape(pts.shape[0], pts.shape[1], -1)[..., c]
            return np.einsum("eq,eq,qi->ei", wdet, vals, phi)

        return _assemble_vector(space, kernel, workers)

    return np.concatenate([for_component(c) for c in range(nc)])


def _time_samples(t: float, sampling: DataSampling, k: Optional[float], points: int):
    if sampling is DataSampling.POINTWISE or not k:
        return [t], [1.0]
    ts, ws = gauss_legendre(points, t - k, t)
    return list(ts), list(ws / k)


def assemble_load(
    Xh: FESpace,
    f: TimeField,
    t: float,
    sampling: DataSampling = DataSampling.POINTWISE,
    k: Optional[float] = None,
    points: int = 2,
    workers: int = 1,
) -> np.ndarray:
    """⟨f^{m+1}, v_h⟩_Ω with f sampled at t or averaged over [t − k, t]."""
    ts, ws = _time_samples(t, sampling, k, points)
    out = np.zeros(Xh.dof_count)
    for ti, wi in zip(ts, ws):
        out += wi * assemble_source(Xh, lambda p, ti=ti: f(p, ti), workers)
    return out


def assemble_traction(
    Xh: FESpace,
    g_s: TimeField,
    t: float,
    sampling: DataSampling = DataSampling.POINTWISE,
    k: Optional[float] = None,
    points: int = 2,
) -> np.ndarray:
    """⟨g_s^{m+1}, v_h⟩_{Γ_s}; ``g_s`` takes surface points (n, 2)."""
    mesh = Xh.mesh
    surf = mesh.face_tags == BoundaryTag.SURFACE.value
    faces, owners = mesh.faces[surf], mesh.face_tet[surf]
    if not len(faces):
        return np.zeros(Xh.dof_count)
    tets = mesh.tets[owners]
    # position of each face vertex inside its owning tet
    where = np.argmax(tets[:, None, :] == faces[:, :, None], axis=2)
    rule = triangle_rule()
    nf, nq = len(faces), len(rule)
    lam = np.zeros((nf, nq, 4))
    for a in range(3):
        lam[np.arange(nf)[:, None], np.arange(nq)[None, :], where[:, a][:, None]] = rule.points[None, :, a]
    phi, _ = shape_functions(Xh.kind, lam.reshape(-1, 4))
    phi = phi.reshape(nf, nq, -1)
    X = mesh.nodes[faces]
    area2 = np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)
    pts = np.einsum("qa,fad->fqd", rule.points, X)[..., :2]
    dofs = Xh.cell_dofs[owners]

    ts, ws = _time_samples(t, sampling, k, points)
    out = np.zeros((Xh.components, Xh.scalar_count))
    for ti, wi in zip(ts, ws):
        g = np.asarray(g_s(pts.reshape(-1, 2), ti), dtype=float).reshape(nf, nq, -1)
        for c in range(Xh.components):
            local = np.einsum("f,q,fq,fql->fl", area2, rule.weights, g[..., c], phi)
            out[c] += wi * np.bincount(dofs.ravel(), weights=local.ravel(), minlength=Xh.scalar_count)
    return out.ravel()


def assemble_pressure_load(
    Xh: FESpace, q: Callable[[np.ndarray], np.ndarray], workers: int = 1
) -> np.ndarray:
    """∫_Ω q(x) ∇x·v_h for analytic surface pressure q."""
    blocks = []
    for c in range(Xh.components):

        def kernel(cells, c=c):
            _, grad, wdet, pts = Xh.element_basis(cells)
            qv = np.asarray(q(pts[..., :2].reshape(-1, 2)), dtype=float).reshape(wdet.shape)
            return np.einsum("eq,eq,eqj->ej", wdet, qv, grad[..., c])

        blocks.append(_assemble_vector(Xh, kernel, workers))
    return np.concatenate(blocks)


def assemble_gradient_load(
    Xh: FESpace, grad_v: Callable[[np.ndarray], np.ndarray], workers: int = 1
) -> np.ndarray:
    """∫_Ω ∇v : ∇v_h for analytic ∇v of shape (n, components, 3)."""
    blocks = []
    for c in range(Xh.components):

        def kernel(cells, c=c):
            _, grad, wdet, pts = Xh.element_basis(cells)
            gv = np.asarray(grad_v(pts.reshape(-1, 3)), dtype=float)
            gv = gv.reshape(wdet.shape + (Xh.components, 3))[..., c, :]
            return np.einsum("eq,eqd,eqjd->ej", wdet, gv, grad)

        blocks.append(_assemble_vector(Xh, kernel, workers))
    return np.concatenate(blocks)


def assemble_zload(
    Yh: FESpace, dz_v3: Callable[[np.ndarray], np.ndarray], workers: int = 1
) -> np.ndarray:
    """∫_Ω ∂z v₃ ∂z y_h for analytic ∂z v₃."""

    def kernel(cells):
        _, grad, wdet, pts = Yh.element_basis(cells)
        dv = np.asarray(dz_v3(pts.reshape(-1, 3)), dtype=float).reshape(wdet.shape)
        return np.einsum("eq,eq,eqj->ej", wdet, dv, grad[..., 2])

    return _assemble_vector(Yh, kernel, workers)


def apply_dirichlet(A: sp.spmatrix, mask: np.ndarray) -> sp.csr_matrix:
    """Eliminate masked rows and columns, keeping a unit diagonal there."""
    keep = sp.diags((~mask).astype(float))
    return (keep @ A @ keep + sp.diags(mask.astype(float))).tocsr()


def mask_columns(B: sp.spmatrix, mask: np.ndarray) -> sp.csr_matrix:
    """Zero the columns of ``B`` at masked DOFs."""
    return (B @ sp.diags((~mask).astype(float))).tocsr()
