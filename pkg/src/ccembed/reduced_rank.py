"""Greedy reduced-rank factorization of centered connectivity samples.

The learner builds rank-one symmetric separable components one at a time.
Work happens in a compressed coordinate system: with the scaled evaluation
matrix factored as U D V^T, every subject's field is conjugated into the
M-dimensional left-singular basis, making the iteration cost independent
of the grid size.

Metric convention: the uniform grid quadrature weight is folded into the
evaluation matrix (sqrt(w) per factor) and the data (w) once, so every
Frobenius inner product below is a discrete surface inner product.  The
orthonormality constraint is enforced in the induced coefficient metric
Jhat = Phi_w^T Phi_w = V D^2 V^T, the discrete counterpart of the Gram
matrix J (they agree up to grid quadrature error).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import ccmx
from .errors import ConfigurationError, DataError, NumericalError
from .kde import IntensityField
from .splines import BasisSystem

DEGENERATE_RESIDUAL = 1e-12
ASCENT_SLACK = 1e-10


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of the weighted evaluation matrix: Phi_w = U diag(D) V^T."""

    U: np.ndarray
    D: np.ndarray
    V: np.ndarray

    @classmethod
    def from_matrix(cls, phi, rank_tol: float = 1e-10) -> "SvdFactors":
        U, D, Vt = np.linalg.svd(np.asarray(phi, dtype=np.float64),
                                 full_matrices=False)
        if D[0] <= 0 or D[-1] <= rank_tol * D[0]:
            raise ConfigurationError(
                "evaluation matrix is rank deficient; densify the grid or "
                "coarsen the triangulations")
        return cls(U, D, Vt.T)

    @property
    def M(self) -> int:
        return self.D.shape[0]

    def b_from_c(self, c):
        """Compressed image D V^T c of coefficient vector(s); columns map."""
        return (self.V.T @ c) * (self.D[:, None] if np.ndim(c) == 2
                                 else self.D)

    def c_from_b(self, b):
        return self.V @ (b / (self.D[:, None] if np.ndim(b) == 2 else self.D))

    def metric(self) -> np.ndarray:
        """Discrete coefficient Gram matrix Jhat = V D^2 V^T."""
        Jhat = (self.V * self.D**2) @ self.V.T
        return (Jhat + Jhat.T) / 2.0


class ResidualTensor:
    """Stack of compressed per-subject residual slices (N, M, M)."""

    def __init__(self, G: np.ndarray, step: int = 0):
        G = np.asarray(G, dtype=np.float64)
        if G.ndim != 3 or G.shape[1] != G.shape[2]:
            raise DataError("residual tensor must be (N, M, M)")
        self.G = G
        self.step = step

    @property
    def n_subjects(self) -> int:
        return self.G.shape[0]

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.G.ravel()))

    def per_subject_frobenius(self) -> np.ndarray:
        return np.linalg.norm(self.G.reshape(self.n_subjects, -1), axis=1)

    def copy(self) -> "ResidualTensor":
        return ResidualTensor(self.G.copy(), self.step)


@dataclass(frozen=True)
class ReducedRankBasis:
    """Learned coefficient matrix; columns are the component coefficients."""

    C: np.ndarray  # (M, K)
    alpha1: float
    alpha2: int
    basis_ref: str = ""

    @property
    def K(self) -> int:
        return self.C.shape[1]

    def orthonormality_error(self, J) -> float:
        gram = self.C.T @ J @ self.C
        return float(np.max(np.abs(gram - np.eye(self.K))))


@dataclass(frozen=True)
class ScoreMatrix:
    S: np.ndarray  # (N, K)
    subject_ids: tuple

    @property
    def n_subjects(self) -> int:
        return self.S.shape[0]

    @property
    def K(self) -> int:
        return self.S.shape[1]


@dataclass
class FitDiagnostics:
    residual_norms: list          # ||G_k||_F for k = 0..K
    ao_sweeps: list               # AO sweep count per component
    inner_iterations: list        # total power iterations per component
    objective_traces: list        # AO objective trace per component
    ortho_error: float            # max |C^T Jhat C - I|
    degenerate_steps: list
    stopped_early_at: int | None = None
    seed: int | None = None

    def residual_ratio(self, k: int | None = None) -> float:
        r0 = self.residual_norms[0]
        rk = self.residual_norms[-1 if k is None else k]
        if r0 == 0.0:
            return 0.0
        return (rk / r0) ** 2

    def to_dict(self) -> dict:
        return {
            "residual_norms": [float(x) for x in self.residual_norms],
            "ao_sweeps": [int(x) for x in self.ao_sweeps],
            "inner_iterations": [int(x) for x in self.inner_iterations],
            "ortho_error": float(self.ortho_error),
            "degenerate_steps": [int(x) for x in self.degenerate_steps],
            "stopped_early_at": self.stopped_early_at,
            "seed": self.seed,
        }


def compress(fields, svd: SvdFactors, weight: float) -> ResidualTensor:
    """Conjugate weighted fields into the compressed basis: U^T (w Y) U."""
    slices = []
    for f in fields:
        values = f.values if isinstance(f, IntensityField) else np.asarray(f)
        if values.shape[0] != svd.U.shape[0]:
            raise DataError("field grid size does not match the SVD factors")
        g = svd.U.T @ (weight * values) @ svd.U
        slices.append((g + g.T) / 2.0)
    return ResidualTensor(np.array(slices), step=0)


def deflation_projector(C_prev, J, svd: SvdFactors) -> np.ndarray:
    """Projector onto the compressed span of previous components.

    P = D V^T C (C^T J C)^{-1} C^T J V D^{-1}; the zero matrix when no
    components have been selected yet.
    """
    M = svd.M
    if C_prev is None or C_prev.size == 0:
        return np.zeros((M, M))
    C_prev = np.atleast_2d(C_prev)
    W = svd.b_from_c(C_prev)  # (M, k-1)
    JC = J @ C_prev
    gram = C_prev.T @ JC
    right = (JC.T @ svd.V) / svd.D[None, :]  # C^T J V D^{-1}
    try:
        return W @ np.linalg.solve(gram, right)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "previous components lost orthonormality (singular C^T J C)"
        ) from exc


def _truncate(vec, alpha2):
    """Keep the alpha2 largest magnitudes; ties broken by lower index."""
    M = vec.shape[0]
    if alpha2 >= M:
        return vec
    order = np.argsort(-np.abs(vec), kind="stable")
    out = np.zeros_like(vec)
    keep = order[:alpha2]
    out[keep] = vec[keep]
    return out


def penalty_matrix(Q, svd: SvdFactors) -> np.ndarray:
    """Roughness penalty mapped to compressed coordinates: D^-1 V^T Q V D^-1."""
    R = (svd.V.T @ Q @ svd.V) / svd.D[:, None] / svd.D[None, :]
    return (R + R.T) / 2.0


def c_update(G: ResidualTensor, s, alpha1: float, alpha2: int, P, J, Q,
             svd: SvdFactors, c_init, tol: float = 1e-10,
             max_iter: int = 500, penalty=None):
    """Sparse component update by truncated power iterations.

    Maximizes the deflated quadratic form of the score-weighted residual
    (roughness-penalized) subject to the unit-metric constraint and the
    cardinality bound.  Returns (c, info); info records the objective
    trace (non-decreasing), iteration count, and degeneracy.
    """
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(G.G)) or not np.all(np.isfinite(s)):
        raise NumericalError("non-finite entries in residual tensor or scores")
    if alpha2 < 1:
        raise ConfigurationError("alpha2 must be at least 1")
    S_mat = np.tensordot(s, G.G, axes=1)
    if alpha1 > 0:
        S_mat = S_mat - alpha1 * (penalty if penalty is not None
                                  else penalty_matrix(Q, svd))
    S_mat = (S_mat + S_mat.T) / 2.0
    IP = np.eye(svd.M) - P
    S_d = IP @ S_mat @ IP.T
    S_d = (S_d + S_d.T) / 2.0
    scale = float(np.max(np.abs(S_d))) if S_d.size else 0.0
    info = {"iterations": 0, "objective": [], "degenerate": False,
            "ascent_break": False}
    if scale == 0.0:
        info["degenerate"] = True
        info["objective"].append(0.0)
        return np.array(c_init, dtype=np.float64), info
    rho = max(0.0, -float(np.linalg.eigvalsh(S_d)[0])) + 1e-12 * scale

    def normalized(c_vec):
        b_vec = svd.b_from_c(c_vec)
        nrm = float(np.linalg.norm(b_vec))
        if nrm == 0.0:
            return None, None
        return c_vec / nrm, b_vec / nrm

    c0 = _truncate(np.array(c_init, dtype=np.float64), alpha2)
    if not np.any(c0):
        c0 = np.array(c_init, dtype=np.float64)  # degenerate truncation
    c, b = normalized(c0)
    if c is None:
        raise ConfigurationError("c_init has zero norm in the fit metric")
    obj = float(b @ S_d @ b)
    info["objective"].append(obj)
    for it in range(max_iter):
        y = S_d @ b + rho * b
        w_c = _truncate(svd.c_from_b(y), alpha2)
        c_new, b_new = normalized(w_c)
        if c_new is None:
            info["degenerate"] = True
            break
        new_obj = float(b_new @ S_d @ b_new)
        info["iterations"] = it + 1
        if new_obj < obj - ASCENT_SLACK * max(1.0, abs(obj)):
            info["ascent_break"] = True
            break
        c, b = c_new, b_new
        info["objective"].append(new_obj)
        if abs(new_obj - obj) <= tol * max(1.0, abs(new_obj)):
            obj = new_obj
            break
        obj = new_obj
    if not np.all(np.isfinite(c)):
        raise NumericalError("non-finite component produced by c_update")
    return c, info


def s_update(G: ResidualTensor, c, svd: SvdFactors) -> np.ndarray:
    """Closed-form score update: s_i = (D V^T c)^T G_i (D V^T c)."""
    b = svd.b_from_c(np.asarray(c, dtype=np.float64))
    return np.einsum("imn,m,n->i", G.G, b, b)


def residual_update(G: ResidualTensor, c_k, s_column,
                    svd: SvdFactors) -> ResidualTensor:
    """Subtract each subject's rank-one contribution along c_k."""
    b = svd.b_from_c(np.asarray(c_k, dtype=np.float64))
    s_column = np.asarray(s_column, dtype=np.float64)
    out = G.G.copy()
    bb = np.outer(b, b)
    for i in range(out.shape[0]):
        out[i] -= s_column[i] * bb
    return ResidualTensor(out, G.step + 1)


def _orthogonalize_in_support(c, C_prev, Jhat):
    """Project c (within its support) onto the Jhat-orthogonal complement.

    The support is fixed, so sparsity is preserved exactly; least squares
    handles more constraints than support degrees of freedom gracefully.
    """
    support = np.flatnonzero(c)
    if C_prev.size == 0 or support.size == 0:
        return c, True
    A = (Jhat @ C_prev)[support, :]  # (|F|, k-1)
    coef, *_ = np.linalg.lstsq(A, c[support], rcond=None)
    projected = c.copy()
    projected[support] = c[support] - A @ coef
    return projected, True


def _fit_tensor(G0: ResidualTensor, svd: SvdFactors, Q, subject_ids, K: int,
                alpha1: float, alpha2: int, ao_tol: float = 1e-8,
                ao_max_iter: int = 200, seed=None, basis_ref: str = ""):
    """Greedy loop over components on an already-compressed tensor."""
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    if alpha2 < 1:
        raise ConfigurationError("alpha2 must be at least 1")
    if ao_max_iter < 1 or ao_tol <= 0:
        raise ConfigurationError("bad AO iteration controls")
    M = svd.M
    alpha2 = min(int(alpha2), M)
    Jhat = svd.metric()
    penalty = penalty_matrix(Q, svd) if alpha1 > 0 else None
    G = G0.copy()
    r0 = G.frobenius()
    residual_norms = [r0]
    columns, score_cols = [], []
    diagnostics = FitDiagnostics([], [], [], [], 0.0, [], seed=seed)
    for k in range(1, K + 1):
        if residual_norms[-1] < DEGENERATE_RESIDUAL * max(r0, 1.0):
            diagnostics.stopped_early_at = k - 1
            break
        C_prev = (np.column_stack(columns) if columns
                  else np.zeros((M, 0)))
        P = deflation_projector(C_prev, Jhat, svd)
        c, s, trace, sweeps, inner, degenerate = _ao_component(
            G, svd, P, Jhat, penalty, alpha1, alpha2, Q,
            ao_tol, ao_max_iter, k)
        if C_prev.shape[1] > 0:
            c_proj, _ = _orthogonalize_in_support(c, C_prev, Jhat)
            b_proj = svd.b_from_c(c_proj)
            nrm = float(np.linalg.norm(b_proj))
            if nrm > 1e-12:
                c = c_proj / nrm
            else:
                degenerate = True
        imax = int(np.argmax(np.abs(c)))
        if c[imax] < 0:
            c = -c
        s_col = s_update(G, c, svd)
        G = residual_update(G, c, s_col, svd)
        columns.append(c)
        score_cols.append(s_col)
        residual_norms.append(G.frobenius())
        diagnostics.ao_sweeps.append(sweeps)
        diagnostics.inner_iterations.append(inner)
        diagnostics.objective_traces.append(trace)
        if degenerate:
            diagnostics.degenerate_steps.append(k)
        if not np.isfinite(residual_norms[-1]):
            raise NumericalError(f"non-finite residual after component {k}")
    C = np.column_stack(columns) if columns else np.zeros((M, 0))
    S = (np.column_stack(score_cols) if score_cols
         else np.zeros((len(subject_ids), 0)))
    basis = ReducedRankBasis(C, alpha1, alpha2, basis_ref)
    scores = ScoreMatrix(S, tuple(subject_ids))
    diagnostics.residual_norms = residual_norms
    if C.shape[1] > 0:
        diagnostics.ortho_error = basis.orthonormality_error(Jhat)
    return basis, scores, diagnostics


def _ao_component(G, svd, P, Jhat, penalty, alpha1, alpha2, Q,
                  ao_tol, ao_max_iter, k):
    """Alternating optimization for a single component."""
    S_bar = G.G.mean(axis=0)
    IP = np.eye(svd.M) - P
    S_bar_d = IP @ S_bar @ IP.T
    evals, evecs = np.linalg.eigh((S_bar_d + S_bar_d.T) / 2.0)
    b0 = evecs[:, int(np.argmax(np.abs(evals)))]
    c0 = _truncate(svd.c_from_b(b0), alpha2)
    if np.linalg.norm(svd.b_from_c(c0)) < 1e-14:
        c0 = svd.c_from_b(b0)  # thresholding degenerated; keep dense init
    c0 = c0 / np.linalg.norm(svd.b_from_c(c0))
    s = s_update(G, c0, svd)
    if not np.any(s):
        return c0, s, [0.0], 0, 0, True
    c = c0
    objective = None
    trace = []
    inner_total = 0
    sweeps = 0
    degenerate = False
    for sweep in range(ao_max_iter):
        c, info = c_update(G, s, alpha1, alpha2, P, Jhat, Q, svd, c,
                           penalty=penalty)
        inner_total += info["iterations"]
        degenerate = degenerate or info["degenerate"]
        s = s_update(G, c, svd)
        value = float(s @ s)
        if alpha1 > 0:
            value -= alpha1 * float(c @ Q @ c)
        trace.append(value)
        sweeps = sweep + 1
        if objective is not None and \
                abs(value - objective) <= ao_tol * max(1.0, abs(value)):
            objective = value
            break
        objective = value
    return c, s, trace, sweeps, inner_total, degenerate


def fit(fields, sys: BasisSystem, K: int, alpha1: float, alpha2: int,
        ao_tol: float = 1e-8, ao_max_iter: int = 200, seed=None,
        svd: SvdFactors | None = None):
    """Learn the rank-K basis and subject scores from centered fields.

    Returns (ReducedRankBasis, ScoreMatrix, FitDiagnostics).  Fields must
    be centered and share the grid of the basis system.
    """
    fields = list(fields)
    if not fields:
        raise DataError("no fields given")
    for f in fields:
        if f.grid_id != sys.grid.grid_id:
            raise DataError(f"field {f.subject_id} is on a different grid")
    if svd is None:
        svd = SvdFactors.from_matrix(np.sqrt(sys.grid.weight) * sys.Phi)
    G0 = compress(fields, svd, sys.grid.weight)
    subject_ids = [f.subject_id for f in fields]
    return _fit_tensor(G0, svd, sys.Q, subject_ids, K, alpha1, alpha2,
                       ao_tol, ao_max_iter, seed, basis_ref=sys.basis_id)


def variance_explained(diagnostics: FitDiagnostics, k: int | None = None) -> float:
    """Explained fraction 1 - ||G_K||_F^2 / ||G_0||_F^2."""
    return 1.0 - diagnostics.residual_ratio(k)


def variance_explained_trace(diagnostics: FitDiagnostics) -> np.ndarray:
    r = np.asarray(diagnostics.residual_norms)
    if r[0] == 0.0:
        out = np.ones_like(r)
        out[0] = 0.0
        return out
    return 1.0 - (r / r[0]) ** 2


def embed(field: IntensityField, basis: ReducedRankBasis, sys: BasisSystem,
          svd: SvdFactors | None = None, mean_slice=None) -> np.ndarray:
    """Score a (centered) field by replaying the greedy projections."""
    if field.grid_id != sys.grid.grid_id:
        raise DataError("field is on a different grid than the basis system")
    if svd is None:
        svd = SvdFactors.from_matrix(np.sqrt(sys.grid.weight) * sys.Phi)
    g = svd.U.T @ (sys.grid.weight * field.values) @ svd.U
    g = (g + g.T) / 2.0
    if mean_slice is not None:
        g = g - mean_slice
    B = svd.b_from_c(basis.C)  # (M, K)
    scores = np.empty(basis.K)
    for k in range(basis.K):
        b = B[:, k]
        scores[k] = b @ g @ b
        g -= scores[k] * np.outer(b, b)
    return scores


def reconstruct(scores, basis: ReducedRankBasis, sys: BasisSystem) -> np.ndarray:
    """Rank-K surface reconstruction sum_k s_k (Phi c_k)(Phi c_k)^T."""
    scores = np.asarray(scores, dtype=np.float64)
    E = sys.Phi @ basis.C  # (n, K)
    Y = (E * scores) @ E.T
    return (Y + Y.T) / 2.0


def save_fit(directory, basis: ReducedRankBasis, scores: ScoreMatrix,
             diagnostics: FitDiagnostics, meta: dict | None = None,
             mean_slice=None) -> None:
    os.makedirs(directory, exist_ok=True)
    ccmx.write_ccmx(os.path.join(directory, "basis.ccmx"), basis.C)
    ccmx.write_ccmx(os.path.join(directory, "scores.ccmx"), scores.S)
    if mean_slice is not None:
        ccmx.write_ccmx(os.path.join(directory, "mean_g.ccmx"), mean_slice)
    payload = {
        "K": basis.K,
        "alpha1": basis.alpha1,
        "alpha2": basis.alpha2,
        "basis_ref": basis.basis_ref,
        "subject_ids": list(scores.subject_ids),
        "diagnostics": diagnostics.to_dict(),
        "variance_explained": variance_explained(diagnostics),
        "residual_ratio": diagnostics.residual_ratio(),
    }
    if meta:
        payload.update(meta)
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def load_fit(directory):
    C = ccmx.read_ccmx(os.path.join(directory, "basis.ccmx"))
    S = ccmx.read_ccmx(os.path.join(directory, "scores.ccmx"))
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    basis = ReducedRankBasis(C, meta["alpha1"], meta["alpha2"],
                             meta.get("basis_ref", ""))
    scores = ScoreMatrix(S, tuple(meta["subject_ids"]))
    mean_path = os.path.join(directory, "mean_g.ccmx")
    mean_slice = ccmx.read_ccmx(mean_path) if os.path.exists(mean_path) else None
    return basis, scores, meta, mean_slice
