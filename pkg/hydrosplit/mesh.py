"""
Vertically structured tetrahedral meshes.

The 3D domain Ω = {(x, z) : x ∈ S, −D(x) < z < 0} is meshed by extruding a
triangulation of the surface S along iso-σ layers z = −σ D(x) and cutting
every prism into three tetrahedra. Each tetrahedron therefore projects onto
exactly one surface triangle (its column), which is what lets depth
integrals be computed column by column.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    DegenerateTarget,
    DomainUnsupported,
    NonconformingSplit,
    NonSimplePolygon,
    RayEscape,
    ValidationError,
)
from .models import BoundaryTag
from .utils import validate_count, validate_positive

logger = logging.getLogger(__name__)

# Barycentric slack when deciding whether a point lies in a closed simplex.
_INSIDE_TOL = 1e-10


@dataclass(frozen=True)
class Bathymetry:
    """Linear depth D(x, y) = d0 + dx·x + dy·y (flat when dx = dy = 0)."""

    d0: float = 1.0
    dx: float = 0.0
    dy: float = 0.0

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy)
        return self.d0 + self.dx * xy[..., 0] + self.dy * xy[..., 1]

    @property
    def gradient(self) -> Tuple[float, float]:
        return (self.dx, self.dy)

    @property
    def is_flat(self) -> bool:
        return self.dx == 0.0 and self.dy == 0.0


def _polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True, eq=False)
class SurfaceDomainSpec:
    """Polygonal surface S (counterclockwise) and bathymetry D, linear or nodal."""

    polygon_vertices: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    )
    depth: "DepthField" = field(default_factory=Bathymetry)

    def __post_init__(self):
        vertices = np.asarray(self.polygon_vertices, dtype=float)
        object.__setattr__(self, "polygon_vertices", vertices)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 3:
            raise NonSimplePolygon("Polygon needs at least three 2D vertices")
        n = len(vertices)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(vertices[i], vertices[(i + 1) % n], vertices[j], vertices[(j + 1) % n]):
                    raise NonSimplePolygon(f"Edges {i} and {j} intersect")
        if _polygon_area(vertices) <= 0:
            raise NonSimplePolygon("Polygon must be counterclockwise with positive area")
        if self.D_min <= 0:
            raise ValidationError(
                f"Depth must stay positive on S (sidewall hypothesis), minimum is {self.D_min!r}"
            )

    @property
    def area(self) -> float:
        """Shoelace area of the polygon."""
        return _polygon_area(self.polygon_vertices)

    def _depth_samples(self) -> np.ndarray:
        # Linear D peaks at polygon vertices; nodal D also at its own nodes.
        if isinstance(self.depth, NodalBathymetry):
            return self.depth(self.depth.sample_points(self.polygon_vertices))
        return self.depth(self.polygon_vertices)

    @property
    def D_min(self) -> float:
        return float(np.min(self._depth_samples()))

    @property
    def D_max(self) -> float:
        return float(np.max(self._depth_samples()))

    @property
    def is_rectangle(self) -> bool:
        v = self.polygon_vertices
        if len(v) != 4:
            return False
        xs, ys = np.unique(v[:, 0]), np.unique(v[:, 1])
        return len(xs) == 2 and len(ys) == 2

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        v = self.polygon_vertices
        return float(v[:, 0].min()), float(v[:, 0].max()), float(v[:, 1].min()), float(v[:, 1].max())


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    keys = np.sort(edges, axis=1)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise NonconformingSplit("Surface edge shared by more than two triangles")
    return uniq[counts == 1]


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Conforming triangulation of S."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray

    @classmethod
    def from_arrays(cls, nodes: np.ndarray, triangles: np.ndarray) -> "SurfaceMesh":
        """Build from raw arrays, orienting triangles counterclockwise.

        Raises:
            ValidationError: If a triangle is degenerate.
        """
        nodes = np.asarray(nodes, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        p = nodes[triangles]
        cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
            p[:, 1, 1] - p[:, 0, 1]
        ) * (p[:, 2, 0] - p[:, 0, 0])
        if np.any(np.abs(cross) <= 1e-14 * max(1.0, float(np.abs(nodes).max()) ** 2)):
            raise ValidationError("Degenerate surface triangle (zero area)")
        flip = cross < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        return cls(nodes=nodes, triangles=triangles, boundary_edges=_boundary_edges(triangles))

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )

    @cached_property
    def h(self) -> float:
        p = self.nodes[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return float(lengths.max())

    @cached_property
    def gradlam(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape (Nt, 3, 2)."""
        p = self.nodes[self.triangles]
        J = (p[:, 1:, :] - p[:, :1, :]).transpose(0, 2, 1)
        inv = np.linalg.inv(J)
        return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)

    def barycentric(self, tris: np.ndarray, xy: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``xy`` in triangles ``tris``."""
        x0 = self.nodes[self.triangles[tris, 0]]
        inv = self.gradlam[tris, 1:, :]
        rest = np.einsum("nij,nj->ni", inv, xy - x0)
        return np.concatenate([1.0 - rest.sum(axis=1, keepdims=True), rest], axis=1)

    def locate(self, xy: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Index of a triangle containing each point (-1 when outside)."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        found = np.full(len(xy), -1, dtype=np.int64)
        x0 = self.nodes[self.triangles[:, 0]]
        inv = self.gradlam[:, 1:, :]
        for start in range(0, len(xy), chunk):
            pts = xy[start : start + chunk]
            rest = np.einsum("tij,ntj->nti", inv, pts[:, None, :] - x0[None, :, :])
            lam = np.concatenate([1.0 - rest.sum(axis=2, keepdims=True), rest], axis=2)
            inside = lam.min(axis=2) >= -_INSIDE_TOL
            hit = inside.any(axis=1)
            found[start : start + chunk] = np.where(hit, inside.argmax(axis=1), -1)
        return found


def build_surface_mesh(spec: SurfaceDomainSpec, target_h: float) -> SurfaceMesh:
    """Structured triangulation of a rectangular surface domain.

    Every grid cell is cut along the diagonal from its lower-left to its
    upper-right corner.

    Args:
        spec: Surface domain; must be an axis-aligned rectangle.
        target_h: Requested cell size; the grid uses the smallest cell count
            per direction whose spacing does not exceed it.

    Returns:
        A conforming, counterclockwise SurfaceMesh.

    Raises:
        DegenerateTarget: If ``target_h`` is not positive.
        DomainUnsupported: If the polygon is not a rectangle.
    """
    if isinstance(target_h, bool) or not isinstance(target_h, (int, float)) or not target_h > 0:
        raise DegenerateTarget(target_h)
    if not spec.is_rectangle:
        raise DomainUnsupported(
            "Only axis-aligned rectangles are meshed; build other surfaces with SurfaceMesh.from_arrays"
        )
    x0, x1, y0, y1 = spec.bounds
    nx = max(1, math.ceil((x1 - x0) / target_h - 1e-9))
    ny = max(1, math.ceil((y1 - y0) / target_h - 1e-9))
    sm = _grid_surface(spec.bounds, nx, ny)
    logger.debug("surface mesh %dx%d: %d nodes, %d triangles", nx, ny, sm.node_count, sm.triangle_count)
    return sm


def _grid_surface(bounds: Tuple[float, float, float, float], nx: int, ny: int) -> SurfaceMesh:
    """nx × ny grid on a rectangle, row-major nodes from the lower-left corner."""
    x0, x1, y0, y1 = bounds
    X, Y = np.meshgrid(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1), indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    n00 = (i + j * (nx + 1)).ravel()
    n10, n01, n11 = n00 + 1, n00 + nx + 1, n00 + nx + 2
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return SurfaceMesh(nodes=nodes, triangles=triangles, boundary_edges=_boundary_edges(triangles))


@dataclass(frozen=True, eq=False)
class NodalBathymetry:
    """Piecewise-linear depth given by its values at the nodes of a triangulation.

    Other points get the linear interpolant inside their triangle, so every
    refinement of the surface mesh carries the same P1 depth.
    """

    mesh: SurfaceMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", values)
        if len(values) != self.mesh.node_count:
            raise ValidationError(
                f"Need one depth per bathymetry node: {len(values)} values for {self.mesh.node_count} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("Nodal depths must be finite")

    @classmethod
    def on_grid(cls, bounds: Tuple[float, float, float, float], grid) -> "NodalBathymetry":
        """Depths on the vertices of a regular grid over ``bounds``.

        ``grid[j][i]`` is the depth at x = x0 + i·Δx, y = y0 + j·Δy; the grid
        is cut into triangles the same way ``build_surface_mesh`` cuts it.
        """
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 2 or grid.shape[0] < 2 or grid.shape[1] < 2:
            raise ValidationError(f"Depth grid needs at least 2 x 2 values, got shape {grid.shape}")
        ny, nx = grid.shape[0] - 1, grid.shape[1] - 1
        return cls(mesh=_grid_surface(bounds, nx, ny), values=grid.ravel())

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        flat = xy.reshape(-1, 2)
        tris = self.mesh.locate(flat)
        if np.any(tris < 0):
            raise ValidationError(
                f"{int(np.sum(tris < 0))} point(s) lie outside the bathymetry triangulation"
            )
        lam = self.mesh.barycentric(tris, flat)
        out = np.einsum("ni,ni->n", lam, self.values[self.mesh.triangles[tris]])
        return out.reshape(xy.shape[:-1])

    @property
    def is_flat(self) -> bool:
        return bool(np.ptp(self.values) == 0.0)

    def sample_points(self, polygon: np.ndarray) -> np.ndarray:
        """Polygon vertices plus the bathymetry nodes lying in the closed polygon."""
        inside = _in_polygon(self.mesh.nodes, polygon)
        return np.concatenate([polygon, self.mesh.nodes[inside]])


DepthField = Union[Bathymetry, NodalBathymetry]


def _in_polygon(points: np.ndarray, polygon: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Crossing-number test; points on an edge count as inside."""
    a, b = polygon, np.roll(polygon, -1, axis=0)
    x, y = points[:, 0:1], points[:, 1:2]
    straddle = (a[:, 1] > y) != (b[:, 1] > y)
    dy = np.where(b[:, 1] == a[:, 1], 1.0, b[:, 1] - a[:, 1])
    x_cross = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / dy
    inside = (straddle & (x < x_cross)).sum(axis=1) % 2 == 1

    d = b - a
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("npk,pk->np", rel, d) / np.einsum("pk,pk->p", d, d), 0.0, 1.0)
    gap = np.linalg.norm(rel - t[..., None] * d[None, :, :], axis=2).min(axis=1)
    scale = max(1.0, float(np.abs(polygon).max()))
    return inside | (gap <= tol * scale)


@dataclass(frozen=True, eq=False)
class ColumnMesh:
    """Tetrahedral mesh of Ω built from iso-σ layers.

    Nodes are numbered level by level: node ``j * Ns + i`` sits below surface
    node ``i`` at z = −σ_j D_i. Tets are numbered ``(layer * Nt + tri) * 3 + s``
    for the three pieces ``s`` of each prism.
    """

    surface: SurfaceMesh
    depth_nodal: np.ndarray
    sigma_levels: np.ndarray
    nodes: np.ndarray
    tets: np.ndarray
    column_of_tet: np.ndarray
    layer_of_tet: np.ndarray
    faces: np.ndarray
    face_tags: np.ndarray
    face_tet: np.ndarray

    @property
    def layer_count(self) -> int:
        return len(self.sigma_levels) - 1

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def tet_count(self) -> int:
        return len(self.tets)

    @property
    def node_level(self) -> np.ndarray:
        return np.arange(self.node_count) // self.surface.node_count

    @property
    def node_surface(self) -> np.ndarray:
        return np.arange(self.node_count) % self.surface.node_count

    @cached_property
    def geometry(self) -> Tuple[np.ndarray, np.ndarray]:
        """Signed Jacobian determinants (Ne,) and barycentric gradients (Ne, 4, 3)."""
        X = self.nodes[self.tets]
        J = (X[:, 1:, :] - X[:, :1, :]).transpose(0, 2, 1)
        det = np.linalg.det(J)
        inv = np.linalg.inv(J)
        gradlam = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
        return det, gradlam

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(self.geometry[0]) / 6.0

    @cached_property
    def diameters(self) -> np.ndarray:
        X = self.nodes[self.tets]
        pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        lengths = np.stack([np.linalg.norm(X[:, a] - X[:, b], axis=1) for a, b in pairs], axis=1)
        return lengths.max(axis=1)

    @property
    def h(self) -> float:
        """Largest element diameter."""
        return float(self.diameters.max())

    def quality(self) -> Tuple[float, float, float]:
        """(max diameter, min diameter, ratio)."""
        d = self.diameters
        return float(d.max()), float(d.min()), float(d.max() / d.min())

    @cached_property
    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unique edges (Nedge, 2) and tet-to-edge map (Ne, 6).

        Local edge order is 01, 02, 03, 12, 13, 23.
        """
        pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        local = np.stack([np.sort(self.tets[:, [a, b]], axis=1) for a, b in pairs], axis=1)
        uniq, inverse = np.unique(local.reshape(-1, 2), axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1, 6)

    def prism_tets(self, tris: np.ndarray, layers: np.ndarray) -> np.ndarray:
        """Ids of the three tets of prism (tri, layer), shape (..., 3)."""
        base = (np.asarray(layers) * self.surface.triangle_count + np.asarray(tris)) * 3
        return base[..., None] + np.arange(3)

    def barycentric(self, tets: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``points`` (n, 3) in ``tets`` (n,)."""
        _, gradlam = self.geometry
        x0 = self.nodes[self.tets[tets, 0]]
        rest = np.einsum("nij,nj->ni", gradlam[tets, 1:, :], points - x0)
        return np.concatenate([1.0 - rest.sum(axis=1, keepdims=True), rest], axis=1)

    def depth_at(self, xy: np.ndarray, tris: Optional[np.ndarray] = None) -> np.ndarray:
        """Piecewise-linear depth at surface points."""
        if tris is None:
            tris = self.surface.locate(xy)
        lam = self.surface.barycentric(tris, xy)
        return np.einsum("ni,ni->n", lam, self.depth_nodal[self.surface.triangles[tris]])

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Tet containing each point of Ω̄.

        Raises:
            RayEscape: If any point is outside the mesh.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tris = self.surface.locate(points[:, :2])
        outside = tris < 0
        safe = np.where(outside, 0, tris)
        depth = self.depth_at(points[:, :2], safe)
        sigma = -points[:, 2] / depth
        layer = np.clip(np.searchsorted(self.sigma_levels, sigma, side="right") - 1, 0, self.layer_count - 1)
        found = np.full(len(points), -1, dtype=np.int64)
        for shift in (0, -1, 1):
            todo = (found < 0) & ~outside
            if not todo.any():
                break
            lay = np.clip(layer[todo] + shift, 0, self.layer_count - 1)
            cand = self.prism_tets(safe[todo], lay)
            idx = np.flatnonzero(todo)
            for s in range(3):
                lam = self.barycentric(cand[:, s], points[idx])
                ok = (lam.min(axis=1) >= -_INSIDE_TOL) & (found[idx] < 0)
                found[idx[ok]] = cand[ok, s]
        missing = int(np.count_nonzero(found < 0))
        if missing:
            raise RayEscape(missing)
        return found


def _split_prisms(surface: SurfaceMesh, layers: int) -> np.ndarray:
    """Cut every prism into three tets with the sorted-index staircase rule.

    With surface nodes a < b < c, top level t and bottom level t + 1, the
    pieces are {a_t, b_t, c_t, a_b}, {a_b, b_t, c_t, b_b}, {a_b, b_b, c_t, c_b}.
    A quad face over surface edge p < q is therefore always cut along the
    diagonal p_bottom–q_top, whichever prism it belongs to.
    """
    ns = surface.node_count
    tri = np.sort(surface.triangles, axis=1)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    out = []
    for layer in range(layers):
        top, bot = layer * ns, (layer + 1) * ns
        k1 = np.column_stack([a + top, b + top, c + top, a + bot])
        k2 = np.column_stack([a + bot, b + top, c + top, b + bot])
        k3 = np.column_stack([a + bot, b + bot, c + top, c + bot])
        out.append(np.stack([k1, k2, k3], axis=1).reshape(-1, 4))
    return np.concatenate(out)


def _classify_faces(
    tets: np.ndarray, surface: SurfaceMesh, layers: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ns = surface.node_count
    local = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
    all_faces = np.concatenate([np.sort(tets[:, list(f)], axis=1) for f in local])
    owner = np.tile(np.arange(len(tets)), len(local))
    faces, first, counts = np.unique(all_faces, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 2):
        raise NonconformingSplit("A face is shared by more than two tets")

    level = faces // ns
    tags = np.full(len(faces), BoundaryTag.INTERIOR.value, dtype=np.int64)
    boundary = counts == 1
    top = boundary & np.all(level == 0, axis=1)
    bottom = boundary & np.all(level == layers, axis=1)
    lateral = boundary & ~top & ~bottom
    tags[top] = BoundaryTag.SURFACE.value
    tags[bottom] = BoundaryTag.BOTTOM.value
    tags[lateral] = BoundaryTag.LATERAL.value

    # A lateral face must stand on a boundary edge of S; anything else is a
    # face left unmatched by a neighbouring prism.
    if lateral.any():
        surf = np.sort(faces[lateral] % ns, axis=1)
        pairs = np.where((surf[:, 0] == surf[:, 1])[:, None], surf[:, 1:], surf[:, :2])
        pairs = np.sort(pairs, axis=1)
        known = {tuple(e) for e in np.sort(surface.boundary_edges, axis=1).tolist()}
        distinct = [len(set(row)) == 2 for row in surf.tolist()]
        bad = [
            not (ok and tuple(p) in known) for ok, p in zip(distinct, pairs.tolist())
        ]
        if any(bad):
            raise NonconformingSplit(
                f"{sum(bad)} unmatched interior face(s) after the prism split"
            )
    return faces, tags, owner[first]


def _extrude(
    surface: SurfaceMesh,
    depth_nodal: np.ndarray,
    layers: int,
    sigma_levels: Optional[Sequence[float]] = None,
) -> ColumnMesh:
    if sigma_levels is None:
        sigma = np.arange(layers + 1, dtype=float) / layers
    else:
        sigma = np.asarray(sigma_levels, dtype=float)
        if (
            len(sigma) != layers + 1
            or sigma[0] != 0.0
            or sigma[-1] != 1.0
            or np.any(np.diff(sigma) <= 0)
        ):
            raise ValidationError("sigma_levels must increase strictly from 0 to 1 with layers + 1 entries")
    depth_nodal = np.asarray(depth_nodal, dtype=float)
    if np.any(depth_nodal <= 0):
        raise ValidationError("Depth must stay positive at every surface node (sidewall hypothesis)")

    ns = surface.node_count
    xy = np.tile(surface.nodes, (layers + 1, 1))
    z = -np.repeat(sigma, ns) * np.tile(depth_nodal, layers + 1)
    nodes = np.column_stack([xy, z])

    tets = _split_prisms(surface, layers)
    X = nodes[tets]
    det = np.einsum(
        "ni,ni->n",
        X[:, 1] - X[:, 0],
        np.cross(X[:, 2] - X[:, 0], X[:, 3] - X[:, 0]),
    )
    flip = det < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]

    nt = surface.triangle_count
    column = np.tile(np.repeat(np.arange(nt), 3), layers)
    layer = np.repeat(np.arange(layers), 3 * nt)
    faces, tags, owner = _classify_faces(tets, surface, layers)
    return ColumnMesh(
        surface=surface,
        depth_nodal=depth_nodal,
        sigma_levels=sigma,
        nodes=nodes,
        tets=tets,
        column_of_tet=column,
        layer_of_tet=layer,
        faces=faces,
        face_tags=tags,
        face_tet=owner,
    )


def extrude_iso_sigma(
    sm: SurfaceMesh,
    spec: SurfaceDomainSpec,
    layers: int,
    sigma_levels: Optional[Sequence[float]] = None,
) -> ColumnMesh:
    """Extrude a surface mesh into iso-σ layers of tetrahedra.

    Args:
        sm: Surface triangulation of S.
        spec: Domain description; its bathymetry is interpolated at the
            surface nodes.
        layers: Number of layers L ≥ 1.
        sigma_levels: Optional L + 1 fractions 0 = σ₀ < … < σ_L = 1
            (uniform by default).

    Returns:
        The ColumnMesh with 3·L tets per surface triangle.

    Raises:
        ValidationError: On bad layer data or non-positive depth.
        NonconformingSplit: If the face consistency check fails.
    """
    layers = validate_count(layers, "layers", 1)
    mesh = _extrude(sm, spec.depth(sm.nodes), layers, sigma_levels)
    logger.debug(
        "column mesh: %d nodes, %d tets, h=%.4g", mesh.node_count, mesh.tet_count, mesh.h
    )
    return mesh


def refine_uniform(
    spec: SurfaceDomainSpec, target_h: float, layers: int, level: int
) -> ColumnMesh:
    """Mesh of refinement ``level``: h₀·2^(−level) and L₀·2^level layers."""
    validate_positive(target_h, "target_h")
    level = validate_count(level, "level", 0)
    surface = build_surface_mesh(spec, target_h / 2**level)
    return extrude_iso_sigma(surface, spec, layers * 2**level)
