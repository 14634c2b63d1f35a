"""Two-group inference in the embedding space.

Provides the kernel two-sample (MMD) permutation test, univariate
per-dimension permutation tests, and the standard step-up/step-down
multiple-testing corrections.  Permutation p-values use the add-one
formula and count ties as extreme.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError

DEFAULT_PERMUTATIONS = 10_000


@dataclass(frozen=True)
class GroupLabels:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if labels.size == 0 or not np.all(np.isin(labels, (0, 1))):
            raise ConfigurationError("labels must be 0/1")
        if labels.min() == labels.max():
            raise ConfigurationError("both groups must be nonempty")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n0(self) -> int:
        return int(np.sum(self.labels == 0))

    @property
    def n1(self) -> int:
        return int(np.sum(self.labels == 1))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_permutations: int
    seed: int | None = None
    degenerate: bool = False


def _scores_array(S) -> np.ndarray:
    arr = np.asarray(getattr(S, "S", S), dtype=np.float64)
    if arr.ndim != 2:
        raise DataError("scores must be a 2-D array (subjects x dimensions)")
    return arr


def pairwise_distances(S) -> np.ndarray:
    """Euclidean distances between score rows; symmetric, zero diagonal."""
    X = _scores_array(S)
    gram = X @ X.T
    gram = (gram + gram.T) / 2.0
    sq = np.diag(gram)
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def _permutation_masks(labels: np.ndarray, n_perm: int, rng) -> np.ndarray:
    return np.stack([rng.permutation(labels) for _ in range(n_perm)])


def _mmd_from_kernel(K: np.ndarray, masks: np.ndarray,
                     n0: int, n1: int) -> np.ndarray:
    """Biased MMD^2 for each (possibly permuted) 0/1 mask row."""
    total = float(K.sum())
    row = K.sum(axis=1)
    m = masks.astype(np.float64)
    s11 = np.einsum("pi,pi->p", m @ K, m)
    s1t = m @ row
    s00 = total - 2.0 * s1t + s11
    s01 = s1t - s11
    return s11 / n1**2 + s00 / n0**2 - 2.0 * s01 / (n0 * n1)


def mmd_test(S, labels, n_perm: int = DEFAULT_PERMUTATIONS, seed: int = 0,
             kernel: str = "gaussian") -> TestResult:
    """Kernel two-sample permutation test on embedding rows.

    The default statistic is the biased MMD^2 with a Gaussian kernel and
    median-heuristic bandwidth computed once on the pooled sample.  The
    "energy" kernel (-distance) is available behind the flag; it is a
    distance-based alternative, not a claim about any particular study.
    """
    if n_perm < 100:
        raise ConfigurationError("need at least 100 permutations")
    labels = labels if isinstance(labels, GroupLabels) else GroupLabels(labels)
    X = _scores_array(S)
    if X.shape[0] != labels.labels.shape[0]:
        raise DataError("scores and labels disagree on subject count")
    D = pairwise_distances(X)
    off = D[~np.eye(D.shape[0], dtype=bool)]
    nonzero = off[off > 0]
    if nonzero.size == 0:
        warnings.warn("all embeddings identical; MMD test is degenerate")
        return TestResult(0.0, 1.0, n_perm, seed, degenerate=True)
    if kernel == "gaussian":
        sigma = float(np.median(nonzero))
        Kmat = np.exp(-(D**2) / (2.0 * sigma**2))
    elif kernel == "energy":
        Kmat = -D
    else:
        raise ConfigurationError(f"unknown kernel {kernel!r}")
    rng = np.random.default_rng(seed)
    observed = float(_mmd_from_kernel(
        Kmat, labels.labels[None, :], labels.n0, labels.n1)[0])
    masks = _permutation_masks(labels.labels, n_perm, rng)
    perm_stats = _mmd_from_kernel(Kmat, masks, labels.n0, labels.n1)
    count = int(np.sum(perm_stats >= observed))
    p = (1.0 + count) / (1.0 + n_perm)
    return TestResult(observed, p, n_perm, seed)


def per_dimension_tests(S, labels, n_perm: int = DEFAULT_PERMUTATIONS,
                        seed: int = 0):
    """Absolute mean-difference permutation test per embedding dimension."""
    if n_perm < 100:
        raise ConfigurationError("need at least 100 permutations")
    labels = labels if isinstance(labels, GroupLabels) else GroupLabels(labels)
    X = _scores_array(S)
    if X.shape[0] != labels.labels.shape[0]:
        raise DataError("scores and labels disagree on subject count")
    n0, n1 = labels.n0, labels.n1
    total = X.sum(axis=0)

    def stats_for(mask_rows):
        s1 = mask_rows.astype(np.float64) @ X  # (p, K)
        return np.abs(s1 / n1 - (total[None, :] - s1) / n0)

    observed = stats_for(labels.labels[None, :])[0]
    rng = np.random.default_rng(seed)
    masks = _permutation_masks(labels.labels, n_perm, rng)
    perm_stats = stats_for(masks)  # (n_perm, K)
    counts = np.sum(perm_stats >= observed[None, :], axis=0)
    p_values = (1.0 + counts) / (1.0 + n_perm)
    return [TestResult(float(observed[k]), float(p_values[k]), n_perm, seed)
            for k in range(X.shape[1])]


def _check_pvalues(p_values) -> np.ndarray:
    p = np.asarray(p_values, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise DataError("empty p-value list")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise DataError("p-values must lie in [0, 1]")
    return p


def bh_fdr(p_values, q: float):
    """Benjamini-Hochberg step-up; returns (reject mask, adjusted p)."""
    p = _check_pvalues(p_values)
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    thresholds = q * np.arange(1, m + 1) / m
    passing = np.flatnonzero(ranked <= thresholds)
    reject = np.zeros(m, dtype=bool)
    if passing.size:
        reject[order[:passing[-1] + 1]] = True
    raw = ranked * m / np.arange(1, m + 1)
    adjusted_sorted = np.minimum(np.minimum.accumulate(raw[::-1])[::-1], 1.0)
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    return reject, adjusted


def holm_correction(p_values, alpha: float):
    """Bonferroni-Holm step-down; returns (reject mask, adjusted p)."""
    p = _check_pvalues(p_values)
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    reject_sorted = np.zeros(m, dtype=bool)
    for i in range(m):
        if ranked[i] <= alpha / (m - i):
            reject_sorted[i] = True
        else:
            break
    raw = ranked * (m - np.arange(m))
    adjusted_sorted = np.minimum(np.maximum.accumulate(raw), 1.0)
    reject = np.zeros(m, dtype=bool)
    reject[order] = reject_sorted
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    return reject, adjusted
