import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volcast.covariance import (
    CovEstimate,
    RepairConvergenceError,
    decompose,
    nearest_pd,
    pairwise_cov,
    pairwise_covariance,
    recompose,
    repair_correlation,
)

from conftest import make_panel


def brute_pairwise(values):
    """Independent per-pair loop implementation of the pairwise covariance."""
    n = len(values)
    cov = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            both = np.isfinite(values[i]) & np.isfinite(values[j])
            if both.sum() < 2:
                continue
            xi, xj = values[i][both], values[j][both]
            cov[i, j] = np.sum((xi - xi.mean()) * (xj - xj.mean())) / (both.sum() - 1)
    return cov


def test_full_observation_matches_textbook_covariance():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 40))
    cov, counts = pairwise_covariance(x)
    np.testing.assert_allclose(cov, np.cov(x, ddof=1), rtol=0, atol=1e-12)
    assert counts.min() == 40


def test_zero_overlap_pair_is_zero_and_not_estimable():
    x = np.full((2, 30), np.nan)
    x[0, :15] = np.linspace(0.0, 1.0, 15)
    x[1, 15:] = np.linspace(1.0, 0.0, 15)
    panel = make_panel(x)
    est = pairwise_cov(panel)
    assert est.cov[0, 1] == 0.0
    assert not est.estimable[0, 1]
    assert est.estimable[0, 0] and est.estimable[1, 1]


def test_self_copy_has_unit_off_diagonal_correlation():
    rng = np.random.default_rng(1)
    row = rng.standard_normal(25)
    est = pairwise_cov(make_panel(np.vstack([row, row])))
    assert est.corr[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_pairwise_matches_brute_force_with_missing():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 50))
    x[rng.random((6, 50)) < 0.25] = np.nan
    cov, counts = pairwise_covariance(x)
    np.testing.assert_allclose(cov, brute_pairwise(x), rtol=0, atol=1e-12)
    assert np.array_equal(cov, cov.T)
    assert np.all(np.diag(cov) >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_pairwise_symmetry_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    t = int(rng.integers(2, 30))
    x = rng.standard_normal((n, t))
    x[rng.random((n, t)) < 0.3] = np.nan
    cov, counts = pairwise_covariance(x)
    assert np.array_equal(cov, cov.T)
    assert np.array_equal(counts, counts.T)
    assert np.all(np.diag(cov) >= 0)
    assert np.all(np.isfinite(cov))


# ---------------------------------------------------------------------------
# decompose / recompose


def test_decompose_diagonal_case():
    stdevs, corr = decompose(np.diag([4.0, 9.0]))
    np.testing.assert_allclose(stdevs, [2.0, 3.0])
    np.testing.assert_allclose(corr, np.eye(2))


def test_decompose_unit_variances_gives_corr_equal_cov():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    stdevs, corr = decompose(cov)
    np.testing.assert_allclose(corr, cov, atol=1e-15)


def test_decompose_recompose_round_trip():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 30))
    cov = np.cov(a, ddof=1)
    stdevs, corr = decompose(cov)
    np.testing.assert_allclose(recompose(stdevs, corr), cov, rtol=1e-10)


def test_decompose_zero_variance_rows():
    cov = np.array([[1.0, 0.0], [0.0, 0.0]])
    stdevs, corr = decompose(cov)
    assert stdevs[1] == 0.0
    assert corr[1, 1] == 0.0 and corr[0, 1] == 0.0
    assert corr[0, 0] == 1.0


def test_decompose_negative_diagonal_raises():
    with pytest.raises(ValueError, match="negative"):
        decompose(np.array([[-1.0, 0.0], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# nearest PD


def oracle_nearest_corr(a, max_iter=5000, tol=1e-10):
    """Independently coded alternating projections (eigenvalue clipping
    refined by the unit-diagonal projection with Dykstra correction)."""
    y = a.copy().astype(float)
    ds = np.zeros_like(y)
    for _ in range(max_iter):
        r = y - ds
        w, v = np.linalg.eigh((r + r.T) / 2)
        x = (v * np.clip(w, 0, None)) @ v.T
        ds = x - r
        prev = y
        y = x.copy()
        np.fill_diagonal(y, 1.0)
        if np.linalg.norm(y - prev) < tol:
            break
    return y


def test_identity_is_returned_unchanged():
    identity = np.eye(3)
    assert nearest_pd(identity) is identity


def test_any_pd_matrix_is_a_fixed_point():
    rng = np.random.default_rng(4)
    b = rng.standard_normal((5, 5))
    pd_matrix = b @ b.T + 5 * np.eye(5)
    assert nearest_pd(pd_matrix) is pd_matrix


def test_two_by_two_nearest_correlation():
    a = np.array([[1.0, 1.2], [1.2, 1.0]])
    fixed = nearest_pd(a, unit_diagonal=True)
    expected = oracle_nearest_corr(a)
    np.testing.assert_allclose(fixed, expected, atol=1e-8)
    np.testing.assert_allclose(np.diag(fixed), 1.0, atol=1e-14)
    assert np.linalg.eigvalsh(fixed)[0] >= -1e-8
    # the analytic answer for this case is the all-ones matrix
    np.testing.assert_allclose(fixed, np.ones((2, 2)), atol=1e-7)


def test_nearest_pd_matches_oracle_on_random_indefinite():
    rng = np.random.default_rng(5)
    for _ in range(20):
        b = rng.standard_normal((6, 6))
        a = (b + b.T) / 2
        np.fill_diagonal(a, 1.0)
        if np.linalg.eigvalsh(a)[0] >= 0:
            continue
        fixed = nearest_pd(a, unit_diagonal=True)
        np.testing.assert_allclose(fixed, oracle_nearest_corr(a), atol=1e-6)


def test_nearest_pd_is_idempotent():
    rng = np.random.default_rng(6)
    for _ in range(25):
        b = rng.standard_normal((8, 8))
        a = (b + b.T) / 2
        fixed = nearest_pd(a, unit_diagonal=True) if a.shape else a
        again = nearest_pd(fixed, unit_diagonal=True)
        assert again is fixed  # already PD: returned unchanged


def test_frobenius_optimality_sanity():
    rng = np.random.default_rng(7)
    b = rng.standard_normal((3, 3))
    a = (b + b.T) / 2
    np.fill_diagonal(a, 1.0)
    off = a - np.eye(3)
    scale = 1.1
    while np.linalg.eigvalsh(np.eye(3) + scale * off)[0] >= 0:
        scale *= 1.5  # blow up the off-diagonal until indefinite
    a = np.eye(3) + scale * off
    assert np.linalg.eigvalsh(a)[0] < 0
    fixed = nearest_pd(a, unit_diagonal=True)
    dist = np.linalg.norm(a - fixed)
    for _ in range(1000):
        c = rng.standard_normal((3, 3))
        candidate = c @ c.T + 1e-6 * np.eye(3)
        d = np.sqrt(np.diag(candidate))
        candidate = candidate / np.outer(d, d)  # random correlation matrix
        assert np.linalg.norm(a - candidate) >= dist - 1e-9


def test_nearest_pd_rejects_asymmetric_input():
    with pytest.raises(ValueError, match="symmetric"):
        nearest_pd(np.array([[1.0, 0.5], [0.1, 1.0]]))


def test_repair_correlation_preserves_dead_rows():
    corr = np.array(
        [
            [1.0, 1.2, 0.0],
            [1.2, 1.0, 0.0],
            [0.0, 0.0, 0.0],  # non-estimable series
        ]
    )
    fixed, repaired = repair_correlation(corr)
    assert repaired
    assert np.all(fixed[2] == 0.0) and np.all(fixed[:, 2] == 0.0)
    np.testing.assert_allclose(np.diag(fixed)[:2], 1.0, atol=1e-12)
    active = fixed[:2, :2]
    assert np.linalg.eigvalsh(active)[0] >= -1e-8


def test_repair_correlation_finishes_hard_rank_deficient_case():
    # many series on a short window: massively indefinite pairwise matrix
    rng = np.random.default_rng(8)
    x = rng.standard_normal((120, 21)) * 0.01
    x[rng.random((120, 21)) < 0.05] = np.nan
    cov, _ = pairwise_covariance(x)
    stdevs, corr = decompose(cov)
    assert np.linalg.eigvalsh(corr)[0] < -1e-8
    fixed, repaired = repair_correlation(corr)
    assert repaired
    assert np.linalg.eigvalsh(fixed)[0] >= -1e-8
    np.testing.assert_allclose(np.diag(fixed), 1.0, atol=1e-12)


def test_repair_noop_on_psd_input():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((5, 40))
    stdevs, corr = decompose(np.cov(a, ddof=1))
    fixed, repaired = repair_correlation(corr)
    assert not repaired
    assert fixed is corr
