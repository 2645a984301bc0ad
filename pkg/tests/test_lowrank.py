import numpy as np
import pytest
import scipy.linalg

from dts_forge.errors import InvalidRatio, NonFiniteInput
from dts_forge.lowrank import (
    CodecConfig,
    SvdFactors,
    compose,
    rank_for_ratio,
    truncated_svd,
)


def test_rank_for_ratio_examples():
    assert rank_for_ratio(768, 768, 0.3) == 231
    assert rank_for_ratio(768, 768, 1.0) == 768
    assert rank_for_ratio(5, 9, 0.01) == 1


def test_rank_for_ratio_rejects_bad_ratio():
    for r in (0.0, -0.5, 1.5):
        with pytest.raises(InvalidRatio):
            rank_for_ratio(4, 4, r)
    with pytest.raises(InvalidRatio):
        CodecConfig(r=0.0)


def test_diagonal_matrix():
    f = truncated_svd(np.diag([3.0, 1.0]), 1)
    np.testing.assert_allclose(f.sigma, [3.0])
    np.testing.assert_allclose(np.abs(f.U[:, 0]), [1.0, 0.0], atol=1e-12)
    assert f.U[0, 0] > 0
    np.testing.assert_allclose(f.Vt[0], [1.0, 0.0], atol=1e-12)


def test_zero_matrix():
    f = truncated_svd(np.zeros((4, 4)), 2)
    np.testing.assert_allclose(f.sigma, [0.0, 0.0])
    np.testing.assert_allclose(compose(f), np.zeros((4, 4)), atol=1e-12)


def test_full_rank_reconstruction_against_independent_solver():
    rng = np.random.default_rng(11)
    m = rng.standard_normal((8, 6))
    f = truncated_svd(m, 6)
    rel = np.linalg.norm(m - compose(f)) / np.linalg.norm(m)
    assert rel <= 1e-5
    # singular values agree with a different LAPACK driver
    ref = scipy.linalg.svd(m, compute_uv=False, lapack_driver="gesvd")
    np.testing.assert_allclose(f.sigma, ref, rtol=1e-10)


def test_truncation_error_matches_discarded_spectrum():
    rng = np.random.default_rng(12)
    m = rng.standard_normal((20, 14))
    all_sigma = scipy.linalg.svd(m, compute_uv=False, lapack_driver="gesvd")
    for k in (1, 5, 10, 14):
        f = truncated_svd(m, k)
        err_sq = np.linalg.norm(m - compose(f)) ** 2
        expect = float(np.sum(all_sigma[k:] ** 2))
        assert err_sq == pytest.approx(expect, rel=1e-4, abs=1e-9)


def test_eckart_young_monotonicity():
    rng = np.random.default_rng(13)
    m = rng.standard_normal((16, 16))
    errs = [np.linalg.norm(m - compose(truncated_svd(m, k))) for k in range(1, 17)]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))


def test_orthonormality_residual():
    rng = np.random.default_rng(14)
    m = rng.standard_normal((64, 64))
    f = truncated_svd(m, 64)
    assert np.max(np.abs(f.U.T @ f.U - np.eye(64))) <= 1e-5
    assert np.max(np.abs(f.Vt @ f.Vt.T - np.eye(64))) <= 1e-5


def test_sigma_sorted_nonnegative():
    rng = np.random.default_rng(15)
    f = truncated_svd(rng.standard_normal((10, 7)), 7)
    assert np.all(f.sigma >= 0)
    assert np.all(np.diff(f.sigma) <= 0)


def test_determinism_and_sign_convention():
    rng = np.random.default_rng(16)
    m = rng.standard_normal((12, 9))
    f1 = truncated_svd(m, 5)
    f2 = truncated_svd(m.copy(), 5)
    assert np.array_equal(f1.U, f2.U)
    assert np.array_equal(f1.sigma, f2.sigma)
    assert np.array_equal(f1.Vt, f2.Vt)
    for j in range(5):
        col = f1.U[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_rejects_nonfinite_and_bad_rank():
    with pytest.raises(NonFiniteInput):
        truncated_svd(np.array([[np.inf, 0.0], [0.0, 1.0]]), 1)
    with pytest.raises(InvalidRatio):
        truncated_svd(np.eye(3), 4)
