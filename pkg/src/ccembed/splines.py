"""Piecewise-linear spherical spline basis over the two triangulations.

Each mesh vertex carries a hat function: inside a triangle the hat value
is the homogeneous barycentric coordinate of the evaluation point with
respect to that vertex (zero outside the vertex star).  The basis system
bundles the evaluation matrix Phi over a grid, the Gram matrix J of exact
surface inner products, and the roughness (gradient-energy) matrix Q.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError, GeometryError, NumericalError
from .geometry import Grid, Hemisphere, SphericalTriangulation, SurfacePoint

# 7-point degree-5 symmetric rule on the unit simplex (weights sum to 1)
_SQ15 = np.sqrt(15.0)
_A1 = (6.0 + _SQ15) / 21.0
_A2 = (6.0 - _SQ15) / 21.0
_TRI7_NODES = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _A1, 1 - 2 * _A1], [_A1, 1 - 2 * _A1, _A1], [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2], [_A2, 1 - 2 * _A2, _A2], [1 - 2 * _A2, _A2, _A2],
])
_TRI7_WEIGHTS = np.array([9 / 40,
                          (155 + _SQ15) / 1200, (155 + _SQ15) / 1200,
                          (155 + _SQ15) / 1200,
                          (155 - _SQ15) / 1200, (155 - _SQ15) / 1200,
                          (155 - _SQ15) / 1200])


def triangle_rule(depth: int = 1):
    """Quadrature nodes/weights on the unit simplex, subdivided ``depth`` times.

    Returns (nodes (Q, 3) barycentric, weights (Q,) summing to 1).
    """
    cells = [np.eye(3)]
    for _ in range(depth):
        nxt = []
        for cell in cells:
            a, b, c = cell
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array([a, ab, ca]), np.array([b, bc, ab]),
                    np.array([c, ca, bc]), np.array([ab, bc, ca])]
        cells = nxt
    nodes = np.vstack([_TRI7_NODES @ cell for cell in cells])
    weights = np.tile(_TRI7_WEIGHTS, len(cells)) / len(cells)
    return nodes, weights


@dataclass(frozen=True)
class BasisSystem:
    """Spline basis over both hemispheres with its metric matrices.

    Phi is n x M with at most 3 nonzeros per row; J and Q are M x M and
    block-diagonal across hemispheres.  All arrays are frozen after
    assembly; reads are thread-safe.
    """

    tri_left: SphericalTriangulation
    tri_right: SphericalTriangulation
    grid: Grid
    Phi: np.ndarray
    J: np.ndarray
    Q: np.ndarray
    quad_depth: int

    def __post_init__(self):
        for arr in (self.Phi, self.J, self.Q):
            arr.setflags(write=False)

    @property
    def M1(self) -> int:
        return self.tri_left.n_vertices

    @property
    def M2(self) -> int:
        return self.tri_right.n_vertices

    @property
    def M(self) -> int:
        return self.M1 + self.M2

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def basis_id(self) -> str:
        h = hashlib.sha256()
        h.update(self.grid.grid_id.encode())
        h.update(self.tri_left.vertices.tobytes())
        h.update(self.tri_right.vertices.tobytes())
        return h.hexdigest()[:16]

    def tri_for(self, hemi: int) -> SphericalTriangulation:
        return self.tri_left if hemi == 0 else self.tri_right

    def offset_for(self, hemi: int) -> int:
        return 0 if hemi == 0 else self.M1


def _hat_rows(tri: SphericalTriangulation, points):
    """(vertex index triples, hat values) for a batch of points on one sphere."""
    tri_idx, bary = tri.locate_batch(points)
    return tri.triangles[tri_idx], bary


def evaluation_matrix(tri_left, tri_right, grid: Grid) -> np.ndarray:
    """Row i holds the hat-function values of grid point i (<= 3 nonzeros)."""
    if not (np.any(grid.hemis == 0) and np.any(grid.hemis == 1)):
        raise DataError("grid must cover both hemispheres")
    M1, M2 = tri_left.n_vertices, tri_right.n_vertices
    Phi = np.zeros((grid.n, M1 + M2))
    for hemi, tri, offset in ((0, tri_left, 0), (1, tri_right, M1)):
        rows = np.flatnonzero(grid.hemis == hemi)
        if rows.size == 0:
            continue
        cols, vals = _hat_rows(tri, grid.points[rows])
        for c in range(3):
            Phi[rows, offset + cols[:, c]] = vals[:, c]
    return Phi


def evaluate_basis(point: SurfacePoint, sys: BasisSystem) -> np.ndarray:
    """Dense M-vector of hat values at one point (<= 3 nonzeros)."""
    hemi = 0 if point.hemisphere is Hemisphere.LEFT else 1
    tri = sys.tri_for(hemi)
    cols, vals = _hat_rows(tri, point.direction[None, :])
    out = np.zeros(sys.M)
    out[sys.offset_for(hemi) + cols[0]] = vals[0]
    return out


def spline_values(sys: BasisSystem, coeffs, points, hemis) -> np.ndarray:
    """Evaluate the spline with coefficients ``coeffs`` at arbitrary points."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    hemis = np.asarray(hemis)
    out = np.zeros(points.shape[0])
    for hemi in (0, 1):
        rows = np.flatnonzero(hemis == hemi)
        if rows.size == 0:
            continue
        cols, vals = _hat_rows(sys.tri_for(hemi), points[rows])
        block = coeffs[sys.offset_for(hemi) + cols]  # (m, 3)
        out[rows] = np.einsum("mc,mc->m", vals, block)
    return out


def _triangle_frames(tri: SphericalTriangulation):
    """Per-triangle planar area, unit normal, and origin-plane distance."""
    corners = tri.vertices[tri.triangles]  # (F, 3, 3)
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    area = norm / 2.0
    normal = cross / norm[:, None]
    dist = np.einsum("fi,fi->f", corners[:, 0], normal)
    if np.any(dist <= 0):
        raise GeometryError("triangle plane through the origin")
    return corners, area, normal, dist


def _gram_block(tri: SphericalTriangulation, depth: int) -> np.ndarray:
    """Exact-surface Gram matrix of one hemisphere's hat functions.

    Integrates hat products over each spherical triangle by mapping a
    planar simplex rule through the radial projection (its area element
    picks up a d / r^3 factor for a plane at distance d from the origin).
    """
    corners, area, _, dist = _triangle_frames(tri)
    nodes, weights = triangle_rule(depth)
    planar = np.einsum("qc,fcx->fqx", nodes, corners)  # (F, Q, 3)
    r = np.linalg.norm(planar, axis=2)
    hats = nodes[None, :, :] / r[:, :, None]  # homogeneous coords on sphere
    jac = (area[:, None] * weights[None, :] * dist[:, None]) / r**3
    local = np.einsum("fqa,fqb,fq->fab", hats, hats, jac)
    J = np.zeros((tri.n_vertices, tri.n_vertices))
    tris = tri.triangles
    for a in range(3):
        for b in range(3):
            np.add.at(J, (tris[:, a], tris[:, b]), local[:, a, b])
    return J


def _roughness_block(tri: SphericalTriangulation) -> np.ndarray:
    """Gradient-energy (Dirichlet) stiffness matrix of one hemisphere.

    Assembled per flat triangle from the constant gradients of the linear
    hats, so hemisphere-constant coefficient vectors are exact null
    vectors and the matrix is PSD.
    """
    corners, area, normal, _ = _triangle_frames(tri)
    grads = np.empty_like(corners)  # (F, 3 corners, 3)
    for a in range(3):
        edge = corners[:, (a + 2) % 3] - corners[:, (a + 1) % 3]
        grads[:, a] = np.cross(normal, edge) / (2.0 * area[:, None])
    local = np.einsum("fax,fbx,f->fab", grads, grads, area)
    Q = np.zeros((tri.n_vertices, tri.n_vertices))
    tris = tri.triangles
    for a in range(3):
        for b in range(3):
            np.add.at(Q, (tris[:, a], tris[:, b]), local[:, a, b])
    return Q


def gram_matrix(tri_left, tri_right, depth: int = 1) -> np.ndarray:
    """Block-diagonal Gram matrix J of surface inner products."""
    M1, M2 = tri_left.n_vertices, tri_right.n_vertices
    J = np.zeros((M1 + M2, M1 + M2))
    J[:M1, :M1] = _gram_block(tri_left, depth)
    J[M1:, M1:] = _gram_block(tri_right, depth)
    J = (J + J.T) / 2.0
    try:
        np.linalg.cholesky(J)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "Gram matrix not positive definite; raise the quadrature depth"
        ) from exc
    return J


def roughness_matrix(tri_left, tri_right) -> np.ndarray:
    """Block-diagonal roughness matrix Q (surface gradient energy)."""
    M1, M2 = tri_left.n_vertices, tri_right.n_vertices
    Q = np.zeros((M1 + M2, M1 + M2))
    Q[:M1, :M1] = _roughness_block(tri_left)
    Q[M1:, M1:] = _roughness_block(tri_right)
    return (Q + Q.T) / 2.0


def build_basis_system(tri_left, tri_right, grid: Grid,
                       quad_depth: int = 1) -> BasisSystem:
    Phi = evaluation_matrix(tri_left, tri_right, grid)
    J = gram_matrix(tri_left, tri_right, quad_depth)
    Q = roughness_matrix(tri_left, tri_right)
    return BasisSystem(tri_left, tri_right, grid, Phi, J, Q, quad_depth)
