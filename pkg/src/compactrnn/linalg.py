"""Dense linear algebra core: SVD, norms, and rank selection.

Matrices are plain 2-D float64 numpy arrays (row-major). The SVD is a
one-sided cyclic Jacobi, chosen for determinism and high relative accuracy
at the matrix sizes this package works with; results are bit-identical
across repeated calls on the same input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

# One-sided Jacobi: rotate until every column pair is orthogonal to this
# relative tolerance, giving up after a fixed sweep budget.
_JACOBI_TOL = 1e-14
_MAX_SWEEPS = 60


def as_matrix(data) -> np.ndarray:
    """Validate and return a 2-D float64 matrix.

    Rejects empty dimensions and non-finite entries.
    """
    w = np.asarray(data, dtype=np.float64)
    if w.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got ndim={w.ndim}")
    if w.shape[0] == 0 or w.shape[1] == 0:
        raise InvalidInputError(f"matrix has a zero dimension: {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("matrix entries must be finite")
    return np.ascontiguousarray(w)


def as_sigma(sigma) -> np.ndarray:
    """Validate a vector of nonnegative singular values."""
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InvalidInputError("singular values must form a nonempty vector")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("singular values must be finite")
    if np.any(s < 0):
        raise InvalidInputError("singular values must be nonnegative")
    return s


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``w = u @ diag(sigma) @ vt`` with descending ``sigma``."""

    u: np.ndarray       # m x d, orthonormal columns
    sigma: np.ndarray   # d, descending, nonnegative
    vt: np.ndarray      # d x n, orthonormal rows

    @property
    def rank_dim(self) -> int:
        return self.sigma.size


def frobenius_norm(w) -> float:
    """Square root of the sum of squared entries."""
    return float(np.linalg.norm(as_matrix(w)))


def trace_norm(sigma) -> float:
    """Sum of singular values (nuclear norm, given the spectrum)."""
    return float(np.sum(as_sigma(sigma)))


def nondim_trace_norm_coeff(sigma) -> float:
    """Scale-invariant concentration measure of a singular value spectrum.

    Returns (||sigma||_1 / ||sigma||_2 - 1) / (sqrt(d) - 1), which is 0
    exactly for rank-1 spectra and 1 when all d values are equal. Requires
    d >= 2 and a nonzero spectrum.
    """
    s = as_sigma(sigma)
    d = s.size
    if d < 2:
        raise InvalidInputError("coefficient requires at least 2 singular values")
    l2 = float(np.linalg.norm(s))
    if l2 == 0.0:
        raise InvalidInputError("coefficient is undefined for a zero spectrum")
    l1 = float(np.sum(s))
    return (l1 / l2 - 1.0) / (math.sqrt(d) - 1.0)


def rank_for_variance(sigma, threshold: float) -> int:
    """Smallest r with sum_{i<=r} sigma_i^2 >= threshold * sum_i sigma_i^2.

    ``sigma`` must be descending and not all zero; ``threshold`` lies in
    (0, 1]. Variance is measured on squared singular values.
    """
    s = as_sigma(sigma)
    if np.any(np.diff(s) > 0):
        raise InvalidInputError("singular values must be sorted descending")
    if not 0.0 < threshold <= 1.0:
        raise InvalidInputError(f"threshold must lie in (0, 1], got {threshold}")
    energy = np.cumsum(s * s)
    total = energy[-1]
    if total == 0.0:
        raise InvalidInputError("all singular values are zero")
    return int(np.searchsorted(energy, threshold * total, side="left")) + 1


def svd(w) -> SvdResult:
    """Deterministic thin SVD via one-sided cyclic Jacobi.

    Columns of ``u`` and rows of ``vt`` are orthonormal; ``sigma`` is
    descending. Each left singular vector's first nonzero component is
    made nonnegative, with the flip propagated to ``vt``.
    """
    a = as_matrix(w)
    m, n = a.shape
    if m >= n:
        u, sigma, vt = _jacobi(a)
    else:
        # Run on the transpose and swap the factor roles.
        ut, sigma, vtt = _jacobi(np.ascontiguousarray(a.T))
        u, vt = vtt.T, ut.T
        u = np.ascontiguousarray(u)
        vt = np.ascontiguousarray(vt)
    _fix_signs(u, vt)
    return SvdResult(u=u, sigma=sigma, vt=vt)


def split_factors(svd_result: SvdResult, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced rank-r split (U, V) with U = u[:, :r] sqrt(S), V = sqrt(S) vt[:r].

    At r = d this attains 0.5 (||U||_F^2 + ||V||_F^2) = sum(sigma), the
    variational characterization of the trace norm.
    """
    d = svd_result.rank_dim
    if not 1 <= r <= d:
        raise InvalidInputError(f"rank {r} out of range [1, {d}]")
    root = np.sqrt(svd_result.sigma[:r])
    u_factor = svd_result.u[:, :r] * root
    v_factor = root[:, None] * svd_result.vt[:r, :]
    return u_factor, v_factor


def _jacobi(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi on a with m >= n: returns thin (u, sigma, vt)."""
    m, n = a.shape
    cols = a.copy()
    v = np.eye(n)
    for _ in range(_MAX_SWEEPS):
        worst = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = cols[:, p] @ cols[:, p]
                beta = cols[:, q] @ cols[:, q]
                gamma = cols[:, p] @ cols[:, q]
                denom = math.sqrt(alpha * beta)
                if denom == 0.0:
                    continue
                rel = abs(gamma) / denom
                if rel <= _JACOBI_TOL:
                    continue
                worst = max(worst, rel)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                cp = cols[:, p].copy()
                cols[:, p] = c * cp - s * cols[:, q]
                cols[:, q] = s * cp + c * cols[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if worst <= _JACOBI_TOL:
            break

    sigma = np.linalg.norm(cols, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    cols = cols[:, order]
    v = v[:, order]

    u = np.zeros((m, n))
    # Columns whose norm is at noise level get replaced by an orthonormal
    # completion; their direction after rotation is rounding noise.
    zero_tol = sigma[0] * 1e-12 if sigma[0] > 0 else 0.0
    nonzero = sigma > zero_tol
    u[:, nonzero] = cols[:, nonzero] / sigma[nonzero]
    for j in np.flatnonzero(~nonzero):
        u[:, j] = _complete_column(u, j)
    return u, sigma, np.ascontiguousarray(v.T)


def _complete_column(u: np.ndarray, j: int) -> np.ndarray:
    """Deterministic unit vector orthogonal to u's columns other than j."""
    m = u.shape[0]
    for basis in range(m):
        cand = np.zeros(m)
        cand[basis] = 1.0
        for _ in range(2):  # two Gram-Schmidt passes for stability
            for i in range(u.shape[1]):
                if i == j:
                    continue
                cand -= (u[:, i] @ cand) * u[:, i]
        norm = np.linalg.norm(cand)
        if norm > 0.5:
            return cand / norm
    raise InvalidInputError("failed to complete an orthonormal basis")


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> None:
    """Make each u column's first nonzero component nonnegative, in place."""
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(col)
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
            vt[j, :] = -vt[j, :]
