"""Windowed covariance estimation with missing data.

Covariances are estimated pairwise over the days where both series are
observed, with each pair using its own overlap means. Pairs with fewer than
two common observations (and variances with fewer than two observations)
are set to 0 and marked non-estimable. The resulting correlation matrix can
be indefinite, so a nearest-positive-definite repair in the style of Higham
(alternating projections with a Dykstra correction) is provided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panels import ReturnPanel


class RepairConvergenceError(RuntimeError):
    """Nearest-PD projection did not converge.

    Carries the iteration count, the remaining eigenvalue gap and the last
    iterate (unit-diagonal in correlation mode, but possibly still slightly
    indefinite) so callers can decide how to finish.
    """

    def __init__(self, iterations: int, eig_gap: float, last_iterate: np.ndarray | None = None):
        self.iterations = iterations
        self.eig_gap = eig_gap
        self.last_iterate = last_iterate
        super().__init__(
            f"nearest-PD repair did not converge after {iterations} iterations "
            f"(remaining eigenvalue gap {eig_gap:.3e})"
        )


@dataclass(frozen=True, eq=False)
class CovEstimate:
    """Covariance matrix with its D * R * D decomposition.

    ``cov = diag(stdevs) @ corr @ diag(stdevs)`` on estimable cells; the
    correlation diagonal is 1 exactly where the standard deviation is
    positive and 0 elsewhere.
    """

    cov: np.ndarray
    corr: np.ndarray
    stdevs: np.ndarray
    estimable: np.ndarray  # bool, which cells had >= 2 common observations
    repaired: bool = False


def pairwise_covariance(values: np.ndarray, ddof: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise-complete sample covariance of row series with NaN missing.

    Returns ``(cov, counts)`` where ``counts[i, j]`` is the number of days
    both series were observed. Entries with fewer than ``ddof + 1`` common
    days are 0.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("expected a 2-d series x days array")
    mask = np.isfinite(v)
    a = np.where(mask, v, 0.0)
    m = mask.astype(float)
    counts = m @ m.T
    prod = a @ a.T
    sums = a @ m.T  # sums[i, j] = sum of series i over the (i, j) overlap
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = (prod - sums * sums.T / counts) / (counts - ddof)
    cov[counts < ddof + 1] = 0.0
    # tiny negative variances are cancellation noise
    d = np.einsum("ii->i", cov)
    d[d < 0] = 0.0
    return cov, counts.astype(np.int64)


def decompose(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a covariance matrix into standard deviations and correlations.

    ``corr[i, j]`` is 0 whenever either standard deviation is 0, and the
    diagonal is exactly 1 where the standard deviation is positive.
    """
    cov = np.asarray(cov, dtype=float)
    diag = np.diag(cov).copy()
    scale = max(float(np.max(np.abs(diag))), 1.0)
    if np.any(diag < -1e-12 * scale):
        raise ValueError("covariance diagonal has negative entries")
    diag[diag < 0] = 0.0
    stdevs = np.sqrt(diag)
    denom = np.outer(stdevs, stdevs)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(denom > 0, cov / denom, 0.0)
    np.fill_diagonal(corr, np.where(stdevs > 0, 1.0, 0.0))
    return stdevs, corr


def recompose(stdevs: np.ndarray, corr: np.ndarray) -> np.ndarray:
    return corr * np.outer(stdevs, stdevs)


def pairwise_cov(panel: ReturnPanel, series_ids=None) -> CovEstimate:
    """Pairwise covariance estimate for (a subset of) a windowed panel."""
    values = panel.values if series_ids is None else panel.values[panel.rows(series_ids)]
    cov, counts = pairwise_covariance(values)
    stdevs, corr = decompose(cov)
    return CovEstimate(cov=cov, corr=corr, stdevs=stdevs, estimable=counts >= 2)


def _min_eigval(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(a)[0])


def _is_pd_within(a: np.ndarray, tol: float) -> bool:
    """Whether the minimum eigenvalue exceeds -tol (Cholesky of a + tol*I)."""
    if a.size == 0:
        return True
    try:
        np.linalg.cholesky(a + tol * np.eye(len(a)))
        return True
    except np.linalg.LinAlgError:
        return False


def _project_psd(a: np.ndarray) -> np.ndarray:
    """Projection onto the PSD cone: clip negative eigenvalues at zero."""
    w, v = np.linalg.eigh(a)
    if w[0] >= 0.0:
        return (a + a.T) / 2.0
    out = (v * np.clip(w, 0.0, None)) @ v.T
    return (out + out.T) / 2.0


def nearest_pd(
    matrix: np.ndarray,
    unit_diagonal: bool = False,
    tol: float = 1e-8,
    max_iter: int = 200,
    conv_tol: float = 1e-10,
) -> np.ndarray:
    """Nearest positive (semi-)definite matrix by alternating projections.

    With ``unit_diagonal`` the projection alternates between the PSD cone
    and the unit-diagonal affine set (the nearest-correlation-matrix
    problem); a Dykstra correction keeps the iteration converging to the
    Frobenius-nearest point. Inputs whose smallest eigenvalue already
    exceeds ``-tol`` are returned unchanged.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-8 * max(1.0, float(np.max(np.abs(a))))):
        raise ValueError("matrix must be symmetric")
    if _is_pd_within(a, tol) and (not unit_diagonal or np.allclose(np.diag(a), 1.0, atol=tol)):
        return matrix

    a = (a + a.T) / 2.0
    y = a.copy()
    correction = np.zeros_like(a)
    iteration = 0
    for iteration in range(1, max_iter + 1):
        r = y - correction
        x = _project_psd(r)
        correction = x - r
        y_next = x.copy()
        if unit_diagonal:
            np.fill_diagonal(y_next, 1.0)
        diff = np.linalg.norm(y_next - y) / max(np.linalg.norm(y_next), 1.0)
        y = y_next
        if diff < conv_tol and _is_pd_within(y, tol):
            return (y + y.T) / 2.0
    raise RepairConvergenceError(iteration, max(0.0, -_min_eigval(y)), (y + y.T) / 2.0)


def repair_correlation(corr: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, bool]:
    """PD-repair a correlation matrix, touching only its active block.

    Rows whose diagonal is 0 belong to non-estimable series and stay zero;
    the unit-diagonal repair runs on the remaining submatrix. Returns the
    repaired matrix and whether a repair was actually applied.

    When the alternating projections stall just short of the eigenvalue
    target (large rank-deficient blocks can converge very slowly), the last
    iterate is finished by the shift (R + d I) / (1 + d), which preserves
    the unit diagonal and moves at most O(d) from the projection limit.
    """
    corr = np.asarray(corr, dtype=float)
    active = np.diag(corr) > 0
    if not active.any():
        return corr, False
    sub = corr[np.ix_(active, active)]
    try:
        fixed = nearest_pd(sub, unit_diagonal=True, tol=tol)
    except RepairConvergenceError as exc:
        if exc.last_iterate is None:
            raise
        lam = _min_eigval(exc.last_iterate)
        delta = max(0.0, -lam) + 0.1 * tol
        fixed = (exc.last_iterate + delta * np.eye(len(exc.last_iterate))) / (1.0 + delta)
    if fixed is sub:
        return corr, False
    out = corr.copy()
    out[np.ix_(active, active)] = fixed
    return out, True
