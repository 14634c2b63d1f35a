"""Geometry of the domain: two labeled unit spheres and their triangulations.

The domain is the disjoint union of a "left" and a "right" unit sphere.
Points on different spheres are infinitely far apart; all smoothing and
integration happens per sphere.  Triangulations are closed, consistently
oriented spherical meshes used as the support structure for the piecewise
linear basis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from . import kernels
from .errors import ConfigurationError, GeometryError

LOCATE_TOL = 1e-10

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


class Hemisphere(enum.Enum):
    LEFT = "L"
    RIGHT = "R"


@dataclass(frozen=True)
class SurfacePoint:
    """A point on one of the two unit spheres."""

    hemisphere: Hemisphere
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        nrm = float(np.linalg.norm(d))
        if abs(nrm - 1.0) > 1e-6:
            raise GeometryError(f"direction norm {nrm:.6g} is not 1")
        object.__setattr__(self, "direction", d / nrm)


def normalize_rows(points):
    points = np.asarray(points, dtype=np.float64)
    norms = np.linalg.norm(points, axis=-1, keepdims=True)
    return points / norms


def geodesic_distance(p: SurfacePoint, q: SurfacePoint) -> float:
    """Great-circle distance in radians; +inf across hemispheres."""
    if p.hemisphere is not q.hemisphere:
        return float("inf")
    dot = float(np.clip(np.dot(p.direction, q.direction), -1.0, 1.0))
    return float(np.arccos(dot))


def fibonacci_sphere(m: int) -> np.ndarray:
    """Deterministic quasi-uniform point set on the unit sphere."""
    if m < 1:
        raise ConfigurationError("need at least one point")
    i = np.arange(m, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / m
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = GOLDEN_ANGLE * i
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


def spherical_triangle_area(v1, v2, v3) -> float:
    """Solid angle of a spherical triangle (Van Oosterom & Strackee)."""
    num = abs(float(np.dot(v1, np.cross(v2, v3))))
    den = 1.0 + float(np.dot(v1, v2)) + float(np.dot(v2, v3)) + float(np.dot(v3, v1))
    return 2.0 * float(np.arctan2(num, den))


class SphericalTriangulation:
    """Closed, outward-oriented triangulation of a unit sphere.

    vertices: (V, 3) unit vectors.
    triangles: (F, 3) int vertex indices, positively oriented
        (det[v_i, v_j, v_k] > 0).
    Derived structures (neighbor table, per-triangle inverse corner
    matrices, vertex-to-triangle star map, KD-tree) are built once and the
    object is immutable afterwards, so concurrent queries are safe.
    """

    def __init__(self, vertices, triangles):
        vertices = np.asarray(vertices, dtype=np.float64)
        triangles = np.asarray(triangles, dtype=np.int32)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise GeometryError("vertices must be (V, 3)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise GeometryError("triangles must be (F, 3)")
        norms = np.linalg.norm(vertices, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise GeometryError("vertices must have unit norm (within 1e-12)")
        corners = vertices[triangles]  # (F, 3, 3)
        dets = np.linalg.det(corners)
        if np.any(dets <= 0):
            raise GeometryError("triangles must be outward-oriented")
        self.vertices = vertices
        self.triangles = triangles
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        # inverse of the matrix whose COLUMNS are the corner vertices:
        # bary = inv @ point solves b1*v1 + b2*v2 + b3*v3 = point
        self._invmats = np.ascontiguousarray(
            np.linalg.inv(corners.transpose(0, 2, 1)))
        self._neighbors = self._build_neighbors()
        self.vertex_to_triangles = self._build_star_map()
        self._kdtree = cKDTree(self.vertices)
        self._seed_triangle = np.array(
            [stars[0] for stars in self.vertex_to_triangles], dtype=np.int64)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def _build_neighbors(self):
        """neighbors[f, c] = triangle across the edge opposite corner c."""
        F = self.n_triangles
        edge_map = {}
        neighbors = np.full((F, 3), -1, dtype=np.int32)
        for f in range(F):
            tri = self.triangles[f]
            for c in range(3):
                a, b = tri[(c + 1) % 3], tri[(c + 2) % 3]
                key = (min(a, b), max(a, b))
                edge_map.setdefault(key, []).append((f, c))
        for key, users in edge_map.items():
            if len(users) != 2:
                raise GeometryError(
                    f"edge {key} shared by {len(users)} triangles; "
                    "mesh is not a closed manifold")
            (f1, c1), (f2, c2) = users
            neighbors[f1, c1] = f2
            neighbors[f2, c2] = f1
        self._n_edges = len(edge_map)
        return neighbors

    def _build_star_map(self):
        stars = [[] for _ in range(self.n_vertices)]
        for f, tri in enumerate(self.triangles):
            for v in tri:
                stars[int(v)].append(f)
        if any(not s for s in stars):
            raise GeometryError("isolated vertex (not part of any triangle)")
        return stars

    @property
    def n_edges(self) -> int:
        return self._n_edges

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    def triangle_areas(self) -> np.ndarray:
        """Spherical (solid-angle) area of each triangle."""
        c = self.vertices[self.triangles]
        num = np.abs(np.einsum("fi,fi->f", c[:, 0], np.cross(c[:, 1], c[:, 2])))
        den = (1.0 + np.einsum("fi,fi->f", c[:, 0], c[:, 1])
               + np.einsum("fi,fi->f", c[:, 1], c[:, 2])
               + np.einsum("fi,fi->f", c[:, 2], c[:, 0]))
        return 2.0 * np.arctan2(num, den)

    def locate(self, point):
        """Locate one unit vector; returns (triangle index, barycentric)."""
        tri, bary = self.locate_batch(np.asarray(point, dtype=np.float64)[None, :])
        return int(tri[0]), bary[0]

    def locate_batch(self, points):
        """Vectorized point location with exhaustive fallback.

        Returned barycentric coordinates are the homogeneous (cone)
        coordinates solving b1*v1 + b2*v2 + b3*v3 = point; inside the
        containing triangle all are >= -LOCATE_TOL.  They do not sum to 1.
        """
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise GeometryError("points must be (n, 3)")
        _, nearest = self._kdtree.query(points)
        seeds = self._seed_triangle[nearest]
        max_steps = 4 * int(np.sqrt(self.n_triangles)) + 32
        tri, bary = kernels.locate_walk(
            points, self._invmats, self._neighbors, seeds,
            LOCATE_TOL, max_steps)
        missing = np.flatnonzero(tri < 0)
        if missing.size:
            tri = tri.copy()
            bary = bary.copy()
            for i in missing:
                all_bary = self._invmats @ points[i]  # (F, 3)
                best = int(np.argmax(all_bary.min(axis=1)))
                if all_bary[best].min() < -LOCATE_TOL:
                    raise GeometryError(
                        f"no containing triangle for point {points[i]}")
                tri[i] = best
                bary[i] = all_bary[best]
        return tri, bary


def build_icosphere(subdivision_level: int) -> SphericalTriangulation:
    """Icosahedron subdivided ``subdivision_level`` times, reprojected."""
    if not 0 <= subdivision_level <= 7:
        raise ConfigurationError("subdivision level must be in [0, 7]")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts = normalize_rows(verts)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivision_level):
        midpoint_cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint_cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint_cache[key] = len(verts) - 1
            return midpoint_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    vertices = np.array(verts)
    triangles = np.array(faces, dtype=np.int32)
    triangles = _orient_outward(vertices, triangles)
    return SphericalTriangulation(vertices, triangles)


def _orient_outward(vertices, triangles):
    corners = vertices[triangles]
    dets = np.linalg.det(corners)
    flipped = triangles.copy()
    flip = dets < 0
    flipped[flip, 1], flipped[flip, 2] = triangles[flip, 2], triangles[flip, 1]
    return flipped


def build_delaunay(points) -> SphericalTriangulation:
    """Spherical Delaunay triangulation via the 3D convex hull.

    For points on the unit sphere the convex-hull faces coincide with the
    spherical Delaunay triangles.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 4:
        raise GeometryError("need at least 4 points of shape (n, 3)")
    norms = np.linalg.norm(points, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise GeometryError("points must lie on the unit sphere")
    points = normalize_rows(points)
    try:
        hull = ConvexHull(points)
    except Exception as exc:
        raise GeometryError(f"degenerate point configuration: {exc}") from exc
    if hull.vertices.size != points.shape[0]:
        raise GeometryError(
            "coincident or degenerate points: some inputs are not hull vertices")
    triangles = _orient_outward(points, hull.simplices.astype(np.int32))
    return SphericalTriangulation(points, triangles)


def fibonacci_mesh(n_vertices: int) -> SphericalTriangulation:
    """Delaunay mesh over a Fibonacci lattice with a given vertex count."""
    return build_delaunay(fibonacci_sphere(n_vertices))


def save_mesh(path, tri: SphericalTriangulation) -> None:
    """Plain-text mesh: header `V F`, V lines `x y z`, F lines `i j k`."""
    with open(path, "w") as fh:
        fh.write(f"{tri.n_vertices} {tri.n_triangles}\n")
        for v in tri.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in tri.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")


def load_mesh(path) -> SphericalTriangulation:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GeometryError(f"{path}: bad mesh header")
        nv, nf = int(header[0]), int(header[1])
        verts = np.array([fh.readline().split() for _ in range(nv)],
                         dtype=np.float64)
        tris = np.array([fh.readline().split() for _ in range(nf)],
                        dtype=np.int32)
    return SphericalTriangulation(verts, tris)


@dataclass(frozen=True)
class Grid:
    """Evaluation grid on the two-sphere union with uniform quadrature weight.

    hemis is 0 for left, 1 for right.  The weight is the measure of both
    spheres divided by the number of points, so sums over the grid with
    this weight approximate integrals over the whole domain.
    """

    points: np.ndarray
    hemis: np.ndarray
    grid_id: str = field(default="", compare=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        hem = np.ascontiguousarray(self.hemis, dtype=np.int8)
        if pts.shape[0] != hem.shape[0]:
            raise GeometryError("points and hemis length mismatch")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "hemis", hem)
        pts.setflags(write=False)
        hem.setflags(write=False)
        if not self.grid_id:
            import hashlib

            h = hashlib.sha256()
            h.update(pts.tobytes())
            h.update(hem.tobytes())
            object.__setattr__(self, "grid_id", h.hexdigest()[:16])

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def weight(self) -> float:
        return 8.0 * np.pi / self.n

    def surface_points(self):
        out = []
        for p, h in zip(self.points, self.hemis):
            out.append(SurfacePoint(
                Hemisphere.LEFT if h == 0 else Hemisphere.RIGHT, p))
        return out


def build_grid(n: int) -> Grid:
    """Fibonacci grid of n points split evenly across the two spheres."""
    if n < 2:
        raise ConfigurationError("grid needs at least 2 points")
    n_left = (n + 1) // 2
    n_right = n - n_left
    pts = np.vstack([fibonacci_sphere(n_left), fibonacci_sphere(n_right)])
    hemis = np.concatenate([np.zeros(n_left, dtype=np.int8),
                            np.ones(n_right, dtype=np.int8)])
    return Grid(pts, hemis)
