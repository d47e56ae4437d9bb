"""Quasi-uniform triangulations of convex polygons and point location."""

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import structlog

from .exceptions import invalid_argument, point_outside_domain

logger = structlog.get_logger()

# Barycentric coordinates down to -LOCATE_TOL count as inside.
LOCATE_TOL = 1e-12
# Above this many triangles locate_point uses the bucket grid.
BUCKET_THRESHOLD = 100_000


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with P1 interior-DOF numbering.

    Attributes:
        vertices: (n_vertices, 2) coordinates
        triangles: (n_triangles, 3) vertex indices, counterclockwise
        boundary_flags: True for vertices on the boundary
        interior_index: interior DOF number per vertex, -1 on the boundary
        h: maximal edge length
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_flags: np.ndarray
    interior_index: np.ndarray
    h: float

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(~self.boundary_flags))

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        """Vertex index of every interior DOF, in DOF order."""
        return np.flatnonzero(~self.boundary_flags)

    @cached_property
    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    @cached_property
    def _inverse_maps(self) -> Tuple[np.ndarray, np.ndarray]:
        # Maps x to (lambda_1, lambda_2) per triangle: lam = inv(J) (x - p0).
        p = self.vertices[self.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        return p[:, 0], np.linalg.inv(jac)

    @cached_property
    def _buckets(self) -> "_BucketGrid":
        return _BucketGrid.build(self)

    def barycentric(self, tri: Union[int, np.ndarray], x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of x with respect to triangle(s) tri."""
        origin, inv = self._inverse_maps
        lam12 = np.einsum("...ij,...j->...i", inv[tri], x - origin[tri])
        lam0 = 1.0 - lam12[..., 0] - lam12[..., 1]
        return np.concatenate([lam0[..., None], lam12], axis=-1)


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed areas of the triangles (positive for counterclockwise order)."""
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edges(triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges and, per triangle, the ids of edges (01, 12, 20)."""
    local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
    sorted_pairs = np.sort(local, axis=2).reshape(-1, 2)
    edges, inverse = np.unique(sorted_pairs, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def _max_edge_length(vertices: np.ndarray, edges: np.ndarray) -> float:
    d = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    return float(np.sqrt((d * d).sum(axis=1)).max())


def from_arrays(
    vertices: np.ndarray,
    triangles: np.ndarray,
    boundary_flags: Optional[np.ndarray] = None,
) -> Mesh:
    """Build a Mesh after checking orientation and conformity.

    When boundary_flags is omitted, a vertex is flagged iff it lies on an edge
    that belongs to exactly one triangle.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise invalid_argument("vertices must have shape (n, 2)")
    if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
        raise invalid_argument("triangles must have shape (m, 3) with m >= 1")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise invalid_argument("triangle references a missing vertex")
    if np.any(triangle_areas(vertices, triangles) <= 0.0):
        raise invalid_argument("every triangle must have positive signed area")

    edges, tri_edges = _edges(triangles)
    counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
    if np.any(counts > 2):
        raise invalid_argument("non-conforming mesh: edge shared by >2 triangles")
    # Interior edges must be traversed in opposite directions by their owners.
    directed = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    _, directed_counts = np.unique(directed, axis=0, return_counts=True)
    if np.any(directed_counts > 1):
        raise invalid_argument("non-conforming mesh: inconsistent orientation")

    if boundary_flags is None:
        boundary_flags = np.zeros(len(vertices), dtype=bool)
        boundary_flags[edges[counts == 1].ravel()] = True
    boundary_flags = np.asarray(boundary_flags, dtype=bool)
    if boundary_flags.shape != (len(vertices),):
        raise invalid_argument("boundary_flags must have one entry per vertex")

    interior_index = np.full(len(vertices), -1, dtype=np.int64)
    interior = np.flatnonzero(~boundary_flags)
    interior_index[interior] = np.arange(len(interior))

    return Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_flags=boundary_flags,
        interior_index=interior_index,
        h=_max_edge_length(vertices, edges),
    )


def build_uniform_square(n: int) -> Mesh:
    """Unit square split into n x n cells, each cut by the (0,0)-(1,1) diagonal."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise invalid_argument(f"n must be a positive integer, got {n!r}")
    coords = np.arange(n + 1) / n
    xx, yy = np.meshgrid(coords, coords)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    on_edge = np.isclose(vertices, 0.0) | np.isclose(vertices, 1.0)
    mesh = from_arrays(vertices, triangles, on_edge.any(axis=1))
    logger.debug("mesh_built", n=n, vertices=mesh.n_vertices, h=mesh.h)
    return mesh


def refine_uniform(mesh: Mesh) -> Mesh:
    """Quadrisect every triangle through its edge midpoints.

    Parent vertices keep their indices and coordinates, so the P1 spaces of
    a refinement sequence are nested.
    """
    edges, tri_edges = _edges(mesh.triangles)
    counts = np.bincount(tri_edges.ravel(), minlength=len(edges))

    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])
    # A midpoint is on the boundary iff its edge is a boundary edge.
    boundary_flags = np.concatenate([mesh.boundary_flags, counts == 1])

    a, b, c = mesh.triangles.T
    mid = mesh.n_vertices + tri_edges
    mab, mbc, mca = mid[:, 0], mid[:, 1], mid[:, 2]
    children = np.stack(
        [
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mab, mbc, mca]),
        ],
        axis=1,
    ).reshape(-1, 3)

    refined = from_arrays(vertices, children, boundary_flags)
    logger.debug("mesh_refined", triangles=refined.n_triangles, h=refined.h)
    return refined


def _first_containing(mesh: Mesh, candidates: np.ndarray, x: np.ndarray):
    if len(candidates) == 0:
        return None
    lam = mesh.barycentric(candidates, x)
    inside = np.flatnonzero((lam >= -LOCATE_TOL).all(axis=1))
    if len(inside) == 0:
        return None
    k = inside[0]
    return int(candidates[k]), lam[k]


def locate_point(mesh: Mesh, x) -> Tuple[int, np.ndarray]:
    """Find a triangle containing x and the barycentric coordinates of x.

    Points on shared edges or vertices resolve to the lowest triangle index.

    Raises:
        PointOutsideDomain: if no triangle contains x up to LOCATE_TOL
    """
    x = np.asarray(x, dtype=float)
    if mesh.n_triangles > BUCKET_THRESHOLD:
        candidates = mesh._buckets.candidates(x)
    else:
        candidates = np.arange(mesh.n_triangles)
    found = _first_containing(mesh, candidates, x)
    if found is None:
        raise point_outside_domain(x)
    return found


def locate_points(mesh: Mesh, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised locate_point for an (n, 2) array, with the same tie-break."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    tris = np.empty(len(points), dtype=np.int64)
    lams = np.empty((len(points), 3))
    grid = mesh._buckets
    for i, x in enumerate(points):
        found = _first_containing(mesh, grid.candidates(x), x)
        if found is None:
            raise point_outside_domain(x)
        tris[i], lams[i] = found
    return tris, lams


@dataclass(frozen=True)
class _BucketGrid:
    """Uniform grid of cells listing the triangles whose bounding box meets them."""

    origin: np.ndarray
    cell: np.ndarray
    shape: Tuple[int, int]
    cells: Dict[Tuple[int, int], np.ndarray]

    @classmethod
    def build(cls, mesh: Mesh) -> "_BucketGrid":
        p = mesh.vertices[mesh.triangles]
        lo, hi = p.min(axis=1), p.max(axis=1)
        origin = mesh.vertices.min(axis=0)
        extent = mesh.vertices.max(axis=0) - origin
        side = max(1, int(np.sqrt(mesh.n_triangles / 2.0)))
        shape = (side, side)
        cell = np.where(extent > 0, extent / side, 1.0)

        pad = 1e-9 * max(float(extent.max()), 1.0)
        first = np.clip(((lo - pad - origin) // cell).astype(int), 0, side - 1)
        last = np.clip(((hi + pad - origin) // cell).astype(int), 0, side - 1)
        buckets: Dict[Tuple[int, int], List[int]] = {}
        for t in range(mesh.n_triangles):
            for ix in range(first[t, 0], last[t, 0] + 1):
                for iy in range(first[t, 1], last[t, 1] + 1):
                    buckets.setdefault((ix, iy), []).append(t)
        cells = {key: np.asarray(val) for key, val in buckets.items()}
        return cls(origin=origin, cell=cell, shape=shape, cells=cells)

    def candidates(self, x: np.ndarray) -> np.ndarray:
        ix, iy = ((x - self.origin) // self.cell).astype(int)
        if not (-1 <= ix <= self.shape[0] and -1 <= iy <= self.shape[1]):
            return np.empty(0, dtype=np.int64)
        # Points within rounding of the grid border belong to the border cell.
        ix = min(max(ix, 0), self.shape[0] - 1)
        iy = min(max(iy, 0), self.shape[1] - 1)
        return self.cells.get((ix, iy), np.empty(0, dtype=np.int64))


def dump_mesh(mesh: Mesh, path: Union[str, Path]) -> None:
    """Write the "mesh v1" text format."""
    lines = [f"mesh v1 {mesh.n_vertices} {mesh.n_triangles}"]
    for (x, y), flag in zip(mesh.vertices, mesh.boundary_flags):
        lines.append(f"{float(x)!r} {float(y)!r} {int(flag)}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mesh(path: Union[str, Path]) -> Mesh:
    """Read a mesh written by dump_mesh."""
    rows = Path(path).read_text(encoding="utf-8").split("\n")
    header = rows[0].split()
    if len(header) != 4 or header[:2] != ["mesh", "v1"]:
        raise invalid_argument(f"not a mesh v1 file: {path}")
    nv, nt = int(header[2]), int(header[3])
    vertex_rows = [r.split() for r in rows[1 : 1 + nv]]
    tri_rows = [r.split() for r in rows[1 + nv : 1 + nv + nt]]
    if len(vertex_rows) != nv or len(tri_rows) != nt:
        raise invalid_argument(f"truncated mesh file: {path}")
    vertices = np.array([[float(r[0]), float(r[1])] for r in vertex_rows])
    flags = np.array([r[2] == "1" for r in vertex_rows])
    triangles = np.array([[int(c) for c in r] for r in tri_rows])
    return from_arrays(vertices, triangles, flags)
