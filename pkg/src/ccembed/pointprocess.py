"""Synthetic endpoint-pair generation and endpoint-file ingestion.

Subjects are modeled as doubly stochastic point processes: each subject
draws per-component scores, which shape an intensity surface on the
product of the two spheres; endpoint pairs are then sampled from that
intensity by rejection from uniform proposals.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, ModelError, ParseError
from .geometry import Hemisphere, SurfacePoint, fibonacci_sphere, normalize_rows
from .splines import BasisSystem, spline_values

_HEMI_CODE = {"L": 0, "R": 1}
_HEMI_NAME = {0: "L", 1: "R"}


def _lex_swap_mask(h1, p1, h2, p2):
    """True where (h2, p2) sorts strictly before (h1, p1)."""
    keys1 = np.column_stack([h1.astype(np.float64), p1])
    keys2 = np.column_stack([h2.astype(np.float64), p2])
    swap = np.zeros(h1.shape[0], dtype=bool)
    undecided = np.ones(h1.shape[0], dtype=bool)
    for c in range(keys1.shape[1]):
        less = undecided & (keys2[:, c] < keys1[:, c])
        greater = undecided & (keys2[:, c] > keys1[:, c])
        swap |= less
        undecided &= ~(less | greater)
    return swap


@dataclass(frozen=True)
class PointPattern:
    """Unordered endpoint pairs for one subject, stored canonically.

    Each pair is ordered lexicographically by (hemisphere, x, y, z) so the
    symmetry of connections is a representation-level property.
    """

    subject_id: str
    p1: np.ndarray
    h1: np.ndarray
    p2: np.ndarray
    h2: np.ndarray

    def __post_init__(self):
        p1 = np.ascontiguousarray(self.p1, dtype=np.float64).reshape(-1, 3)
        p2 = np.ascontiguousarray(self.p2, dtype=np.float64).reshape(-1, 3)
        h1 = np.ascontiguousarray(self.h1, dtype=np.int8).reshape(-1)
        h2 = np.ascontiguousarray(self.h2, dtype=np.int8).reshape(-1)
        if not (p1.shape[0] == p2.shape[0] == h1.shape[0] == h2.shape[0]):
            raise DataError("endpoint arrays must have matching lengths")
        swap = _lex_swap_mask(h1, p1, h2, p2)
        p1s, p2s = p1.copy(), p2.copy()
        h1s, h2s = h1.copy(), h2.copy()
        p1s[swap], p2s[swap] = p2[swap], p1[swap]
        h1s[swap], h2s[swap] = h2[swap], h1[swap]
        for name, arr in (("p1", p1s), ("h1", h1s), ("p2", p2s), ("h2", h2s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_pairs(self) -> int:
        return self.p1.shape[0]

    def pairs(self):
        """Pairs as SurfacePoint tuples (convenience accessor)."""
        out = []
        for i in range(self.n_pairs):
            a = SurfacePoint(Hemisphere.LEFT if self.h1[i] == 0
                             else Hemisphere.RIGHT, self.p1[i])
            b = SurfacePoint(Hemisphere.LEFT if self.h2[i] == 0
                             else Hemisphere.RIGHT, self.p2[i])
            out.append((a, b))
        return out


@dataclass(frozen=True)
class LatentModel:
    """Ground-truth generative model in spline coordinates.

    components rows are orthonormal under the basis Gram matrix, so
    recovered directions can be compared against the truth directly.
    The two-argument mean surface is the product lift of the mean spline:
    mu(w1, w2) = m(w1) * m(w2).
    """

    basis: BasisSystem
    mean_coeffs: np.ndarray
    components: np.ndarray  # (K*, M)
    score_variances: np.ndarray  # (K*,)
    baseline_rate: float = 1.0

    def __post_init__(self):
        mean = np.asarray(self.mean_coeffs, dtype=np.float64)
        comps = np.atleast_2d(np.asarray(self.components, dtype=np.float64))
        rho = np.asarray(self.score_variances, dtype=np.float64)
        if comps.shape[1] != self.basis.M or mean.shape[0] != self.basis.M:
            raise ModelError("coefficient length must equal basis size M")
        if rho.shape[0] != comps.shape[0]:
            raise ModelError("one variance per component required")
        if np.any(rho < 0) or self.baseline_rate < 0:
            raise ModelError("variances and baseline rate must be nonnegative")
        gram = comps @ self.basis.J @ comps.T
        if np.max(np.abs(gram - np.eye(comps.shape[0]))) > 1e-8:
            raise ModelError("components must be J-orthonormal (within 1e-8)")
        object.__setattr__(self, "mean_coeffs", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "score_variances", rho)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def j_orthonormalize(vectors, J):
    """Gram-Schmidt under the metric J; rows of the result are orthonormal."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64)).copy()
    out = []
    for v in vectors:
        for u in out:
            v = v - (u @ J @ v) * u
        nrm = np.sqrt(v @ J @ v)
        if nrm < 1e-12:
            raise ModelError("linearly dependent component candidates")
        out.append(v / nrm)
    return np.array(out)


def random_latent_model(basis: BasisSystem, n_components: int,
                        rho_scale: float = 1.0, rho_decay: float = 3.0,
                        mean_level: float = 1.0, baseline_rate: float = 1.0,
                        seed=0) -> LatentModel:
    """Deterministic random model with power-law score variances."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_components, basis.M))
    comps = j_orthonormalize(raw, basis.J)
    rho = rho_scale * np.arange(1, n_components + 1, dtype=np.float64) ** (-rho_decay)
    mean = np.full(basis.M, mean_level)
    return LatentModel(basis, mean, comps, rho, baseline_rate)


class IntensityFunction:
    """Realized intensity surface for one subject.

    Callable on paired point arrays; ``pairwise`` evaluates the full
    matrix over one point set (used for rejection bounds).
    """

    def __init__(self, model: LatentModel, scores):
        self.model = model
        self.scores = np.asarray(scores, dtype=np.float64)

    def _factors(self, points, hemis):
        m = spline_values(self.model.basis, self.model.mean_coeffs, points, hemis)
        xi = np.column_stack([
            spline_values(self.model.basis, c, points, hemis)
            for c in self.model.components])
        return m, xi

    def __call__(self, points1, hemis1, points2, hemis2):
        m1, xi1 = self._factors(points1, hemis1)
        m2, xi2 = self._factors(points2, hemis2)
        vals = m1 * m2 + (xi1 * xi2) @ self.scores
        return self.model.baseline_rate * np.maximum(0.0, vals)

    def pairwise(self, points, hemis):
        m, xi = self._factors(points, hemis)
        vals = np.outer(m, m) + (xi * self.scores) @ xi.T
        return self.model.baseline_rate * np.maximum(0.0, vals)


def sample_intensity(model: LatentModel, seed):
    """Draw per-component scores and return (scores, intensity surface)."""
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, np.sqrt(model.score_variances))
    return z, IntensityFunction(model, z)


def _uniform_points(rng, m):
    hemis = rng.integers(0, 2, size=m).astype(np.int8)
    pts = normalize_rows(rng.standard_normal((m, 3)))
    return pts, hemis


def sample_pattern(intensity: IntensityFunction, expected_count: float,
                   seed, subject_id: str = "synthetic") -> PointPattern:
    """Inhomogeneous pair sampling: Poisson count, rejection locations.

    The pair count is Poisson(expected_count); endpoint pairs are drawn
    proportional to the intensity by rejection from uniform pairs on the
    product domain.
    """
    if expected_count < 0:
        raise ConfigurationError("expected_count must be nonnegative")
    rng = np.random.default_rng(seed)
    m = int(rng.poisson(expected_count))
    probe = np.vstack([fibonacci_sphere(256), fibonacci_sphere(256)])
    probe_h = np.repeat(np.array([0, 1], dtype=np.int8), 256)
    bound = 1.3 * float(intensity.pairwise(probe, probe_h).max())
    if bound <= 0.0:
        if expected_count > 0 and m > 0:
            raise ModelError("intensity is zero everywhere; cannot place pairs")
        m = 0
    if m == 0:
        empty = np.zeros((0, 3))
        ehem = np.zeros(0, dtype=np.int8)
        return PointPattern(subject_id, empty, ehem, empty, ehem)
    acc1, acc2, ach1, ach2 = [], [], [], []
    accepted, proposed = 0, 0
    while accepted < m:
        batch = max(1024, 2 * (m - accepted))
        q1, g1 = _uniform_points(rng, batch)
        q2, g2 = _uniform_points(rng, batch)
        f = intensity(q1, g1, q2, g2)
        keep = rng.random(batch) * bound < f
        acc1.append(q1[keep])
        acc2.append(q2[keep])
        ach1.append(g1[keep])
        ach2.append(g2[keep])
        accepted += int(keep.sum())
        proposed += batch
        if proposed > 10_000_000 and accepted == 0:
            raise ModelError("rejection sampling accepts nothing; "
                             "intensity nearly zero relative to its bound")
    p1 = np.vstack(acc1)[:m]
    p2 = np.vstack(acc2)[:m]
    h1 = np.concatenate(ach1)[:m]
    h2 = np.concatenate(ach2)[:m]
    return PointPattern(subject_id, p1, h1, p2, h2)


ENDPOINT_HEADER = ["subject_id", "hemi1", "x1", "y1", "z1",
                   "hemi2", "x2", "y2", "z2"]


def write_endpoints(path, patterns) -> None:
    """One streamline per row; see ENDPOINT_HEADER for the column layout."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ENDPOINT_HEADER)
        for pat in patterns:
            for i in range(pat.n_pairs):
                writer.writerow([
                    pat.subject_id,
                    _HEMI_NAME[int(pat.h1[i])],
                    repr(float(pat.p1[i, 0])), repr(float(pat.p1[i, 1])),
                    repr(float(pat.p1[i, 2])),
                    _HEMI_NAME[int(pat.h2[i])],
                    repr(float(pat.p2[i, 0])), repr(float(pat.p2[i, 1])),
                    repr(float(pat.p2[i, 2])),
                ])


def _parse_endpoint(row, lineno):
    try:
        h = _HEMI_CODE[row[0].strip()]
        v = np.array([float(row[1]), float(row[2]), float(row[3])])
    except (KeyError, ValueError, IndexError) as exc:
        raise ParseError(f"line {lineno}: bad endpoint fields: {exc}") from exc
    nrm = float(np.linalg.norm(v))
    if abs(nrm - 1.0) > 1e-3:
        raise DataError(f"line {lineno}: vector norm {nrm:.6g} is not 1")
    if abs(nrm - 1.0) > 1e-6:
        warnings.warn(f"line {lineno}: renormalizing endpoint "
                      f"(norm deviation {abs(nrm - 1.0):.2e})")
    return h, v / nrm


def read_endpoints(path):
    """Parse an endpoint CSV into one canonicalized pattern per subject."""
    groups: dict[str, list] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and row[0] == "subject_id"):
                continue
            if len(row) != 9:
                raise ParseError(f"line {lineno}: expected 9 fields, got {len(row)}")
            sid = row[0]
            h1, v1 = _parse_endpoint(row[1:5], lineno)
            h2, v2 = _parse_endpoint(row[5:9], lineno)
            if sid not in groups:
                groups[sid] = []
                order.append(sid)
            groups[sid].append((h1, v1, h2, v2))
    patterns = []
    for sid in order:
        rows = groups[sid]
        p1 = np.array([r[1] for r in rows])
        h1 = np.array([r[0] for r in rows], dtype=np.int8)
        p2 = np.array([r[3] for r in rows])
        h2 = np.array([r[2] for r in rows], dtype=np.int8)
        patterns.append(PointPattern(sid, p1, h1, p2, h2))
    return patterns
