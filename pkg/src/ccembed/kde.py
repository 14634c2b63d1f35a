"""Heat-kernel density estimation of connectivity surfaces on the grid.

The kernel is the spherical heat kernel expressed as a Legendre series in
the dot product; a subject's connectivity estimate is the symmetrized
product-kernel density of its endpoint pairs, normalized to unit mass
over the product domain (count scaling is an explicit option).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import ccmx, kernels
from .errors import ConfigurationError, DataError
from .geometry import Grid, Hemisphere, SurfacePoint
from .pointprocess import PointPattern

DEFAULT_BANDWIDTH = 0.005
SERIES_TOL = 1e-12
SERIES_CAP = 400


def heat_coefficients(t: float) -> np.ndarray:
    """Legendre coefficients (2l+1)/(4 pi) exp(-l(l+1)t), truncated.

    Terms are dropped once their magnitude bound falls below SERIES_TOL;
    the degree is hard-capped at SERIES_CAP.
    """
    if t <= 0:
        raise ConfigurationError("bandwidth must be positive")
    coeffs = [1.0 / (4.0 * np.pi)]
    for l in range(1, SERIES_CAP + 1):
        c = (2 * l + 1) / (4.0 * np.pi) * np.exp(-l * (l + 1) * t)
        if c < SERIES_TOL:
            break
        coeffs.append(c)
    return np.array(coeffs)


def heat_kernel_matrix(points_a, hemis_a, points_b, hemis_b, t: float,
                       coeffs=None) -> np.ndarray:
    """Kernel values between two point sets; zero across hemispheres.

    Truncation can leave microscopically negative values; the result is
    clamped at zero.
    """
    if coeffs is None:
        coeffs = heat_coefficients(t)
    points_a = np.asarray(points_a, dtype=np.float64)
    points_b = np.asarray(points_b, dtype=np.float64)
    hemis_a = np.asarray(hemis_a)
    hemis_b = np.asarray(hemis_b)
    out = np.zeros((points_a.shape[0], points_b.shape[0]))
    for hemi in (0, 1):
        rows = np.flatnonzero(hemis_a == hemi)
        cols = np.flatnonzero(hemis_b == hemi)
        if rows.size == 0 or cols.size == 0:
            continue
        dots = np.clip(points_a[rows] @ points_b[cols].T, -1.0, 1.0)
        vals = kernels.legendre_series(np.ascontiguousarray(dots), coeffs)
        out[np.ix_(rows, cols)] = np.maximum(vals, 0.0)
    return out


def heat_kernel(p: SurfacePoint, q: SurfacePoint, t: float) -> float:
    """Scalar heat-kernel density between two surface points."""
    ha = 0 if p.hemisphere is Hemisphere.LEFT else 1
    hb = 0 if q.hemisphere is Hemisphere.LEFT else 1
    mat = heat_kernel_matrix(p.direction[None, :], np.array([ha]),
                             q.direction[None, :], np.array([hb]), t)
    return float(mat[0, 0])


@dataclass(frozen=True)
class IntensityField:
    """Discretized symmetric connectivity estimate on a fixed grid."""

    subject_id: str
    values: np.ndarray
    grid_id: str
    bandwidth: float | None = None
    pair_count: int | None = None

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise DataError("field values must be a square matrix")
        if not np.array_equal(vals, vals.T):
            raise DataError("field values must be exactly symmetric")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def kde_estimate(pattern: PointPattern, t: float, grid: Grid,
                 count_scale: bool = False, coeffs=None) -> IntensityField:
    """Symmetrized product-kernel density estimate over the grid.

    Y[a, b] averages both endpoint orders of every pair, so the output is
    exactly symmetric.  With count_scale the density is multiplied by the
    pair count (count intensity rather than probability density).
    """
    if pattern.n_pairs == 0:
        raise DataError("cannot estimate a density from an empty pattern")
    if coeffs is None:
        coeffs = heat_coefficients(t)
    A = heat_kernel_matrix(grid.points, grid.hemis, pattern.p1, pattern.h1,
                           t, coeffs)
    B = heat_kernel_matrix(grid.points, grid.hemis, pattern.p2, pattern.h2,
                           t, coeffs)
    Y = (A @ B.T + B @ A.T) / (2.0 * pattern.n_pairs)
    if count_scale:
        Y = Y * pattern.n_pairs
    return IntensityField(pattern.subject_id, Y, grid.grid_id,
                          bandwidth=t, pair_count=pattern.n_pairs)


def center_sample(fields):
    """Subtract the elementwise mean field; returns (centered, mean)."""
    if len(fields) < 2:
        raise DataError("need at least two fields to center")
    grid_id = fields[0].grid_id
    if any(f.grid_id != grid_id for f in fields):
        raise DataError("fields live on different grids")
    mean = np.zeros_like(fields[0].values)
    for f in fields:
        mean += f.values
    mean /= len(fields)
    mean = (mean + mean.T) / 2.0
    mean_field = IntensityField("mean", mean, grid_id)
    centered = [IntensityField(f.subject_id, f.values - mean, grid_id,
                               f.bandwidth, f.pair_count) for f in fields]
    return centered, mean_field


def save_field(field: IntensityField, path_base) -> None:
    """CCMX payload plus JSON sidecar ({base}.ccmx / {base}.json)."""
    ccmx.write_ccmx(f"{path_base}.ccmx", field.values)
    sidecar = {
        "subject_id": field.subject_id,
        "grid_id": field.grid_id,
        "bandwidth": field.bandwidth,
        "pair_count": field.pair_count,
    }
    with open(f"{path_base}.json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_field(path_base) -> IntensityField:
    values = ccmx.read_ccmx(f"{path_base}.ccmx")
    with open(f"{path_base}.json") as fh:
        sidecar = json.load(fh)
    return IntensityField(sidecar["subject_id"], values, sidecar["grid_id"],
                          sidecar.get("bandwidth"), sidecar.get("pair_count"))
