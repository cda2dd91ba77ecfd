import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_graph
from ibg.core import FitConfig, init_factors, loss_efficient, random_factors
from ibg.svd_init import (AFFILIATION_EPS, SvdTriplets, init_from_graph, init_from_svd, mc_svd,
                          simultaneous_iteration_eig, svd_communities)


def augmented(A):
    N = A.shape[0]
    Z = np.zeros((N, N))
    return np.block([[Z, A.T], [A, Z]])


def test_augmented_spectrum_is_plus_minus_sigma():
    rng = np.random.default_rng(0)
    for N in (5, 20, 50):
        A = (rng.random((N, N)) < 0.3).astype(float)
        ev = np.sort(np.linalg.eigvalsh(augmented(A)))
        s = np.linalg.svd(A, compute_uv=False)
        assert_allclose(ev, np.sort(np.concatenate([s, -s])), atol=1e-6)


def test_simultaneous_iteration_on_symmetric_matrix():
    rng = np.random.default_rng(1)
    Qr, _ = np.linalg.qr(rng.normal(size=(30, 30)))
    lam = np.concatenate([[10, 8, -6, 5], rng.uniform(-1, 1, 26)])
    B = Qr @ np.diag(lam) @ Qr.T
    est, Q = simultaneous_iteration_eig(B, 30, 4, J=300, seed=0)
    assert_allclose(np.sort(np.abs(est))[::-1], [10, 8, 6, 5], rtol=1e-8)
    assert_allclose(Q.T @ Q, np.eye(4), atol=1e-10)
    est2, _ = simultaneous_iteration_eig(lambda X: B @ X, 30, 4, J=300, seed=0)
    assert_allclose(est, est2)
    with pytest.raises(ValueError):
        simultaneous_iteration_eig(B, 30, 31)


def test_mc_svd_exact_on_padded_diagonal():
    A = np.zeros((10, 10))
    A[0, 0], A[1, 1], A[2, 2] = 3, 2, 1
    t = mc_svd(A, 3, seed=0)
    assert_allclose(t.sigma, [3, 2, 1], atol=1e-6)
    # A psi = sigma phi
    assert_allclose(A @ t.right, t.left * t.sigma, atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_mc_svd_full_ratio_matches_dense_svd(seed):
    rng = np.random.default_rng(seed)
    A = (rng.random((40, 40)) < 0.25).astype(float)
    A[:10, :10] = 1  # plant a dominant block for a clear spectral gap
    t = mc_svd(A, 2, J=400, seed=seed)
    s = np.linalg.svd(A, compute_uv=False)
    assert_allclose(t.sigma, s[:2], rtol=1e-6)


def test_mc_svd_half_ratio_is_close_on_average():
    rng = np.random.default_rng(0)
    A = (rng.random((100, 100)) < 0.2).astype(float)
    s1 = np.linalg.svd(A, compute_uv=False)[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        errs = [abs(mc_svd(A, 1, J=100, sample_ratio=0.5, seed=s).sigma[0] - s1) / s1 for s in range(20)]
    assert np.median(errs) <= 0.15


def test_mc_svd_rejects_bad_ratio():
    with pytest.raises(ValueError):
        mc_svd(np.eye(3), 1, sample_ratio=0.0)
    with pytest.raises(ValueError):
        mc_svd(np.ones((2, 3)), 1)


def random_triplets(N, m, seed):
    rng = np.random.default_rng(seed)
    L, _ = np.linalg.qr(rng.normal(size=(N, m)))
    R, _ = np.linalg.qr(rng.normal(size=(N, m)))
    return SvdTriplets(np.sort(rng.uniform(1, 5, m))[::-1], L, R)


@pytest.mark.parametrize("seed", range(5))
def test_community_split_reconstructs_triplets(seed):
    t = random_triplets(15, 2, seed)
    U, V, r = svd_communities(t, 8)
    target = (t.left * t.sigma) @ t.right.T
    assert_allclose((U * r) @ V.T, target, atol=1e-10)
    assert U.min() >= 0 and U.max() <= 1 + 1e-15
    assert_allclose(np.abs(U).max(axis=0)[r != 0], 1.0)


def test_signs_of_the_four_communities():
    t = random_triplets(10, 1, 0)
    _, _, r = svd_communities(t, 4)
    assert r[0] > 0 and r[1] < 0 and r[2] < 0 and r[3] > 0


def test_init_from_svd_logits_are_clamped():
    t = random_triplets(12, 2, 1)
    f = init_from_svd(t, 8, n_features=3)
    assert f.F.shape == (8, 3) and not f.F.any()
    lim = np.log((1 - AFFILIATION_EPS) / AFFILIATION_EPS)
    assert np.abs(f.u_logit).max() <= lim + 1e-9
    with pytest.raises(ValueError, match="divisible"):
        init_from_svd(t, 6)


def test_k_not_divisible_by_four_keeps_largest_blocks():
    t = random_triplets(12, 6, 2)
    U, V, r = svd_communities(t, 6)
    assert U.shape == (12, 6)
    assert np.all(np.diff(np.abs(r)) <= 1e-12)


def test_svd_init_beats_random_init():
    g = random_graph(40, 0.1, 0, 5)
    cfg = FitConfig(k=8, alpha=1.0, beta=0.0, svd_iters=200)
    svd_loss = loss_efficient(g, init_from_graph(g, 8, seed=0, iters=200), cfg)
    rnd_loss = np.mean([loss_efficient(g, random_factors(40, 8, 0, seed=s), cfg) for s in range(5)])
    assert svd_loss < rnd_loss
    f = init_factors(g, FitConfig(k=5, alpha=1.0, beta=0.0))
    assert f.rank == 5
