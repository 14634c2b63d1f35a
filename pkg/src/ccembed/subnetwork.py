"""Localization of selected components: support sets and parcel coarsening.

Supports are grid-level indicator vectors of where a component's spline is
nonzero; the coarsened adjacency averages pairwise support overlap over a
parcellation of the grid.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .geometry import Grid
from .splines import BasisSystem

SUPPORT_THRESHOLD = 1e-10


@dataclass(frozen=True)
class Parcellation:
    """Per-grid-point labels with parcel surface areas (steradians)."""

    parcel_ids: np.ndarray
    parcel_names: tuple
    areas: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.parcel_ids, dtype=np.int64)
        areas = np.ascontiguousarray(self.areas, dtype=np.float64)
        if ids.min(initial=0) < 0 or ids.max(initial=-1) >= len(self.parcel_names):
            raise DataError("parcel ids out of range")
        ids.setflags(write=False)
        areas.setflags(write=False)
        object.__setattr__(self, "parcel_ids", ids)
        object.__setattr__(self, "areas", areas)

    @property
    def n_parcels(self) -> int:
        return len(self.parcel_names)


def make_parcellation(grid: Grid, parcel_ids, parcel_names) -> Parcellation:
    """Areas are point counts times the uniform grid weight."""
    ids = np.asarray(parcel_ids, dtype=np.int64)
    if ids.shape[0] != grid.n:
        raise DataError("every grid point needs a parcel label")
    counts = np.bincount(ids, minlength=len(parcel_names))
    if np.any(counts == 0):
        empty = [parcel_names[i] for i in np.flatnonzero(counts == 0)]
        warnings.warn(f"empty parcels will be excluded: {empty}")
    return Parcellation(ids, tuple(parcel_names), counts * grid.weight)


def octant_parcellation(grid: Grid) -> Parcellation:
    """Synthetic 16-parcel atlas: hemisphere times coordinate octant."""
    signs = (grid.points > 0).astype(np.int64)
    ids = grid.hemis.astype(np.int64) * 8 + signs[:, 0] * 4 + signs[:, 1] * 2 + signs[:, 2]
    names = []
    for hemi in "LR":
        for sx in "-+":
            for sy in "-+":
                for sz in "-+":
                    names.append(f"{hemi}_{sx}{sy}{sz}")
    return make_parcellation(grid, ids, names)


def support_set(c_k, sys: BasisSystem, threshold: float = SUPPORT_THRESHOLD):
    """Boolean grid vector: where the component spline is (numerically) nonzero."""
    return np.abs(sys.Phi @ np.asarray(c_k, dtype=np.float64)) > threshold


def coarsen(selected_ks, basis_C, sys: BasisSystem, parc: Parcellation):
    """Parcel-pair support overlap, averaged by parcel surface measure.

    Returns (A, kept_names, kept_indices); empty parcels are excluded
    with a warning.  Entries lie in [0, len(selected_ks)] and saturate at
    the component count when every support covers the whole surface.
    """
    selected_ks = list(selected_ks)
    if not selected_ks:
        raise ConfigurationError("selected_ks must be nonempty")
    if parc.parcel_ids.shape[0] != sys.grid.n:
        raise DataError("parcellation does not match the grid")
    P = parc.n_parcels
    counts = np.bincount(parc.parcel_ids, minlength=P).astype(np.float64)
    keep = np.flatnonzero(counts > 0)
    if keep.size < P:
        excluded = [parc.parcel_names[i] for i in np.flatnonzero(counts == 0)]
        warnings.warn(f"excluding empty parcels: {excluded}")
    w = sys.grid.weight
    A = np.zeros((P, P))
    for k in selected_ks:
        supp = support_set(basis_C[:, k], sys)
        per_parcel = np.bincount(parc.parcel_ids[supp], minlength=P).astype(np.float64)
        A += np.outer(per_parcel, per_parcel)
    areas = counts * w
    denom = np.outer(areas[keep], areas[keep])
    A = (w * w) * A[np.ix_(keep, keep)] / denom
    names = [parc.parcel_names[i] for i in keep]
    return A, names, keep


def top_edges(A, fraction: float):
    """Largest upper-triangle nonzero edges, ties broken by (row, col).

    Returns [(i, j, weight)] sorted by weight descending; the list holds
    ceil(fraction * count) entries.
    """
    if not 0 < fraction <= 1:
        raise ConfigurationError("fraction must be in (0, 1]")
    A = np.asarray(A, dtype=np.float64)
    iu, ju = np.triu_indices(A.shape[0], k=1)
    weights = A[iu, ju]
    nz = weights > 0
    iu, ju, weights = iu[nz], ju[nz], weights[nz]
    order = np.lexsort((ju, iu, -weights))
    count = math.ceil(fraction * weights.size)
    return [(int(iu[o]), int(ju[o]), float(weights[o])) for o in order[:count]]


def read_parcellation(path, grid: Grid) -> Parcellation:
    """CSV rows: grid_index, parcel_id, parcel_name."""
    ids = np.full(grid.n, -1, dtype=np.int64)
    names: dict[int, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0] == "grid_index":
                continue
            if len(row) != 3:
                raise DataError(f"line {lineno}: expected 3 fields")
            idx, pid, name = int(row[0]), int(row[1]), row[2]
            if not 0 <= idx < grid.n:
                raise DataError(f"line {lineno}: grid index {idx} out of range")
            ids[idx] = pid
            names.setdefault(pid, name)
    if np.any(ids < 0):
        raise DataError("parcellation does not label every grid point")
    name_list = [names.get(i, f"parcel_{i}") for i in range(ids.max() + 1)]
    return make_parcellation(grid, ids, name_list)


def write_parcellation(path, parc: Parcellation) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid_index", "parcel_id", "parcel_name"])
        for i, pid in enumerate(parc.parcel_ids):
            writer.writerow([i, int(pid), parc.parcel_names[int(pid)]])


def write_adjacency(path, A, names) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel"] + list(names))
        for name, row in zip(names, np.asarray(A)):
            writer.writerow([name] + [repr(float(x)) for x in row])


def write_edges(path, edges, names) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_a", "parcel_b", "weight"])
        for i, j, weight in edges:
            writer.writerow([names[i], names[j], repr(float(weight))])
