"""Spectral initialisation: simultaneous iteration, Monte Carlo SVD and the
positive/negative-part split of singular triplets into IBG communities."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import IbgFactors, logit

AFFILIATION_EPS = 1e-6


class SvdConvergenceWarning(RuntimeWarning):
    pass


@dataclass
class SvdTriplets:
    """``sigma`` non-increasing, ``left`` (phi) and ``right`` (psi) unit columns."""

    sigma: np.ndarray
    left: np.ndarray
    right: np.ndarray
    spread: float = 0.0


def _as_matmat(B):
    if callable(B):
        return B
    return lambda Q: B @ Q


def _orthonormalize(Z, rng, tol=1e-12):
    """Reduced QR; columns that collapse are replaced by fresh random directions."""
    Q, R = np.linalg.qr(Z)
    scale = max(np.abs(np.diag(R)).max(initial=0.0), 1.0)
    bad = np.abs(np.diag(R)) <= tol * scale
    for _ in range(5):
        if not bad.any():
            break
        Z = Q.copy()
        Z[:, bad] = rng.standard_normal((Z.shape[0], int(bad.sum())))
        Q, R = np.linalg.qr(Z)
        bad = np.abs(np.diag(R)) <= 1e-8
    return Q


def simultaneous_iteration_eig(B, dim: int, M: int, J: int = 100, seed=None):
    """Block power method for the M eigenpairs of largest magnitude of a symmetric operator.

    ``B`` is an array, sparse matrix or a callable ``Q -> B @ Q``.
    Returns ``(lam, Q)`` with ``lam_j = Q_j^T B Q_j``.
    """
    if M > dim:
        raise ValueError(f"cannot extract {M} eigenpairs from a {dim}-dimensional operator")
    rng = np.random.default_rng(seed)
    matmat = _as_matmat(B)
    Q = _orthonormalize(rng.standard_normal((dim, M)), rng)
    for _ in range(J):
        Q = _orthonormalize(np.asarray(matmat(Q)), rng)
    lam = np.einsum("ij,ij->j", Q, np.asarray(matmat(Q)))
    return lam, Q


class _AugmentedSampler:
    """Column-sampled products with ``[[0, A^T], [A, 0]] (+ shift I)``.

    Column ``n < N`` of the augmented matrix is ``(0; A[:, n])``, column
    ``N + i`` is ``(A[i, :]^T; 0)``.  With ``ratio == 1`` the exact product is
    used; otherwise ``2 N ratio`` columns are drawn uniformly with replacement
    and the sum is rescaled by ``2 N / samples``.
    """

    def __init__(self, A, ratio: float, rng):
        self.A_csc = sparse.csc_matrix(A, dtype=np.float64)
        self.A_csr = sparse.csr_matrix(A, dtype=np.float64)
        self.N = A.shape[0]
        self.ratio = ratio
        self.rng = rng
        self.n_samples = max(1, int(round(2 * self.N * ratio)))

    def exact(self, Q, shift=0.0):
        N = self.N
        top = self.A_csr.T @ Q[N:]
        bottom = self.A_csr @ Q[:N]
        return np.vstack([top, bottom]) + shift * Q

    def sampled(self, Q, shift=0.0):
        if self.ratio >= 1.0:
            return self.exact(Q, shift)
        N = self.N
        idx = self.rng.integers(0, 2 * N, self.n_samples)
        lower = idx[idx < N]
        upper = idx[idx >= N] - N
        out = np.zeros_like(Q)
        if lower.size:
            out[N:] += self.A_csc[:, lower] @ Q[lower]
        if upper.size:
            out[:N] += self.A_csr[upper, :].T @ Q[N + upper]
        # unbiased estimate of B Q; the shift needs no graph access and is
        # applied exactly (sampling its columns adds noise of order sigma_1)
        return out * (2 * N / self.n_samples) + shift * Q


def mc_svd(A, M: int, J: int = 100, sample_ratio: float = 1.0, seed=None,
           extraction_repeats: int = 8, spread_tol: float = 0.25) -> SvdTriplets:
    """Monte Carlo simultaneous iteration on the shifted augmented matrix."""
    if not 0 < sample_ratio <= 1:
        raise ValueError("sample_ratio must lie in (0, 1]")
    A = sparse.csr_matrix(A, dtype=np.float64)
    N = A.shape[0]
    if A.shape != (N, N):
        raise ValueError("mc_svd expects a square matrix")
    M = min(M, N)
    rng = np.random.default_rng(seed)
    op = _AugmentedSampler(A, sample_ratio, rng)

    # leading eigenvalue magnitude by sampled power iteration.  B has +-sigma_1
    # as a pair, so the iterate mixes both and its Rayleigh quotient tends to
    # cancel; the norm of B q converges to sigma_1 either way.
    q1 = _orthonormalize(rng.standard_normal((2 * N, 1)), rng)
    for _ in range(J):
        q1 = _orthonormalize(op.sampled(q1), rng)
    shift = float(np.linalg.norm(op.exact(q1)))

    Q = _orthonormalize(rng.standard_normal((2 * N, M)), rng)
    tail = []
    for it in range(J):
        Q = _orthonormalize(op.sampled(Q, shift), rng)
        if it >= J - 4:
            tail.append(np.einsum("ij,ij->j", Q, op.sampled(Q)))

    reps = 1 if sample_ratio >= 1.0 else extraction_repeats
    sigma = np.mean([np.einsum("ij,ij->j", Q, op.sampled(Q)) for _ in range(reps)], axis=0)
    spread = 0.0
    if len(tail) > 1:
        tail = np.array(tail)
        ref = max(np.abs(sigma).max(initial=0.0), 1e-12)
        spread = float((tail.max(axis=0) - tail.min(axis=0)).max() / ref)
        if spread > spread_tol:
            warnings.warn(f"mc_svd: singular value estimates oscillate by {spread:.1%} "
                          "over the final iterations", SvdConvergenceWarning, stacklevel=2)

    right, left = Q[:N].copy(), Q[N:].copy()
    for X in (right, left):
        norms = np.linalg.norm(X, axis=0)
        ok = norms > 1e-12
        X[:, ok] /= norms[ok]
        X[:, ~ok] = 0.0
    # the Rayleigh quotient is negative when the two halves have opposite signs
    neg = sigma < 0
    left[:, neg] *= -1
    sigma = np.abs(sigma)
    order = np.argsort(-sigma, kind="stable")
    return SvdTriplets(sigma[order], left[:, order], right[:, order], spread)


def svd_communities(trip: SvdTriplets, K: int):
    """Split triplets into affiliations ``U, V`` in [0, 1] and magnitudes ``r``.

    For K divisible by 4 each of the first K/4 triplets yields the four
    communities (phi+, psi+, +), (phi+, psi-, -), (phi-, psi+, -), (phi-, psi-, +),
    each normalised by its max-norm.  Otherwise all available triplets are
    split and the K communities of largest |r| are kept.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    n_trip = K // 4 if K % 4 == 0 else K
    n_trip = min(n_trip, trip.sigma.shape[0])
    N = trip.left.shape[0]
    Us, Vs, rs = [], [], []
    for j in range(n_trip):
        s, phi, psi = trip.sigma[j], trip.left[:, j], trip.right[:, j]
        parts_u = (np.clip(phi, 0, None), np.clip(-phi, 0, None))
        parts_v = (np.clip(psi, 0, None), np.clip(-psi, 0, None))
        for iu, iv, sign in ((0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)):
            u, v = parts_u[iu], parts_v[iv]
            nu, nv = np.abs(u).max(initial=0.0), np.abs(v).max(initial=0.0)
            if s == 0 or nu == 0 or nv == 0:
                Us.append(np.zeros(N))
                Vs.append(np.zeros(N))
                rs.append(0.0)
            else:
                Us.append(u / nu)
                Vs.append(v / nv)
                rs.append(sign * s * nu * nv)
    U, V, r = np.array(Us).T.reshape(N, -1), np.array(Vs).T.reshape(N, -1), np.array(rs)
    if K % 4:
        keep = np.argsort(-np.abs(r), kind="stable")[:K]
        U, V, r = U[:, keep], V[:, keep], r[keep]
    if r.shape[0] < K:
        pad = K - r.shape[0]
        U = np.hstack([U, np.zeros((N, pad))])
        V = np.hstack([V, np.zeros((N, pad))])
        r = np.concatenate([r, np.zeros(pad)])
    return U, V, r


def init_from_svd(trip: SvdTriplets, K: int, n_features: int = 0) -> IbgFactors:
    if K % 4:
        raise ValueError(f"K={K} is not divisible by 4")
    return _factors_from_communities(trip, K, n_features)


def _factors_from_communities(trip, K, n_features):
    U, V, r = svd_communities(trip, K)
    return IbgFactors(logit(U, AFFILIATION_EPS), logit(V, AFFILIATION_EPS), r,
                      np.zeros((K, n_features)), np.zeros((K, n_features)))


def init_from_graph(graph, K: int, seed=None, sample_ratio: float = 1.0, iters: int = 100) -> IbgFactors:
    """SVD initialisation of a graph's factors (any K; see :func:`svd_communities`)."""
    n_trip = K // 4 if K % 4 == 0 else K
    n_trip = max(1, min(n_trip, graph.n_nodes))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SvdConvergenceWarning)
        trip = mc_svd(graph.adjacency(), n_trip, J=iters, sample_ratio=sample_ratio, seed=seed)
    return _factors_from_communities(trip, K, graph.n_features)
