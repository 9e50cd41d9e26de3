"""Per-patient FVC slope labels by least squares through a 2-column SVD.

A patient's measurements (week, fvc) are modeled as fvc = slope*week +
intercept. The design matrix always has exactly two columns, so the SVD is
computed in closed form from the 2x2 eigen-decomposition of A^T A rather
than through a general-purpose factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FvcSeries", "SlopeLabel", "build_design_matrix", "svd_2col", "fit_slope"]


@dataclass(frozen=True)
class FvcSeries:
    """One patient's FVC trajectory: visit weeks and volumes in ml."""

    weeks: tuple
    fvc_ml: tuple

    def __post_init__(self):
        if len(self.weeks) != len(self.fvc_ml):
            raise ValueError(
                f"weeks ({len(self.weeks)}) and fvc ({len(self.fvc_ml)}) lengths differ"
            )
        object.__setattr__(self, "weeks", tuple(int(w) for w in self.weeks))
        object.__setattr__(self, "fvc_ml", tuple(float(v) for v in self.fvc_ml))
        for v in self.fvc_ml:
            if not v > 0:
                raise ValueError(f"FVC values must be positive, got {v}")

    def __len__(self):
        return len(self.weeks)

    def without_negative_weeks(self) -> "FvcSeries":
        keep = [(w, v) for w, v in zip(self.weeks, self.fvc_ml) if w >= 0]
        return FvcSeries(tuple(w for w, _ in keep), tuple(v for _, v in keep))


@dataclass(frozen=True)
class SlopeLabel:
    """Fitted line for one patient: slope in ml/week plus intercept at week 0."""

    slope_ml_per_week: float
    intercept_ml: float
    residual_norm: float


def build_design_matrix(series: FvcSeries):
    """Return (A, b): A[:,0] = weeks, A[:,1] = 1, b = fvc values."""
    if len(series) < 2:
        raise ValueError(f"need at least 2 measurements to fit, got {len(series)}")
    weeks = np.asarray(series.weeks, dtype=np.float64)
    a = np.column_stack([weeks, np.ones_like(weeks)])
    b = np.asarray(series.fvc_ml, dtype=np.float64)
    return a, b


def svd_2col(a: np.ndarray):
    """Thin SVD of a j x 2 matrix: (U[j,2], sigma[2], Vt[2,2]).

    Built from the 2x2 eigen-problem of M = A^T A. The small eigenvalue is
    recovered as det(M)/lambda_max and the second eigenvector as the
    rotation of the first, which keeps both accurate when the columns are
    nearly collinear (no catastrophic cancellation in lambda_min).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValueError(f"expected a j x 2 matrix, got {a.shape}")
    if a.shape[0] < 2:
        raise ValueError(f"need at least 2 rows, got {a.shape[0]}")

    m = a.T @ a
    alpha, beta, delta = m[0, 0], m[0, 1], m[1, 1]
    half_tr = 0.5 * (alpha + delta)
    h = np.hypot(0.5 * (alpha - delta), beta)
    lam1 = half_tr + h
    lam2 = 0.0 if lam1 == 0.0 else max((alpha * delta - beta * beta) / lam1, 0.0)

    if beta == 0.0:
        v1 = np.array([1.0, 0.0]) if alpha >= delta else np.array([0.0, 1.0])
    else:
        # eigenvector from the row of (M - lam1 I) with the larger pivot
        cand_a = np.array([beta, lam1 - alpha])
        cand_b = np.array([lam1 - delta, beta])
        v1 = cand_a if abs(lam1 - alpha) >= abs(lam1 - delta) else cand_b
        v1 = v1 / np.linalg.norm(v1)
    v2 = np.array([-v1[1], v1[0]])  # exact orthonormal complement

    sigma = np.array([np.sqrt(lam1), np.sqrt(lam2)])
    u = np.zeros((a.shape[0], 2))
    for i, (s, v) in enumerate(zip(sigma, (v1, v2))):
        if s > 0:
            u[:, i] = (a @ v) / s
        else:
            u[:, i] = _orthonormal_complement(u[:, 0], a.shape[0])
    return u, sigma, np.vstack([v1, v2])


def _orthonormal_complement(u0: np.ndarray, j: int) -> np.ndarray:
    """Unit vector orthogonal to u0 (used when the second singular value is 0)."""
    k = int(np.argmin(np.abs(u0)))
    e = np.zeros(j)
    e[k] = 1.0
    w = e - np.dot(u0, e) * u0
    return w / np.linalg.norm(w)


def fit_slope(series: FvcSeries, rel_tol: float = 1e-12) -> SlopeLabel:
    """Least-squares (slope, intercept) via the pseudo-inverse x = V S+ U^T b.

    Singular values below ``rel_tol * sigma_max`` are truncated. Requires at
    least two distinct weeks; a constant time axis has no defined slope.
    """
    if len(set(series.weeks)) < 2:
        raise ValueError("degenerate time axis: all weeks identical")
    a, b = build_design_matrix(series)
    u, sigma, vt = svd_2col(a)
    cutoff = rel_tol * sigma[0]
    x = np.zeros(2)
    for i in range(2):
        if sigma[i] > cutoff:
            x += (u[:, i] @ b) / sigma[i] * vt[i]
    residual = float(np.linalg.norm(a @ x - b))
    return SlopeLabel(float(x[0]), float(x[1]), residual)
