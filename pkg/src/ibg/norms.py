"""Densifying weights, weighted Frobenius norms and brute-force cut norms.

The brute-force routines are exponential in N and exist to check everything
else on small graphs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateGraphError(ValueError):
    pass


@dataclass(frozen=True)
class DensifyWeights:
    """Edge/non-edge weighting ``q_ij = e + (1 - e) a_ij``.

    ``e`` is the non-edge weight, ``sum_q`` the total weight mass
    ``(1 + gamma) E`` and ``mu = 1 / sum_q``.
    """

    gamma: float
    e: float
    sum_q: float
    mu: float
    n_nodes: int
    n_edges: int

    def q(self, a):
        """Weights for adjacency values ``a`` (0/1 array or scalar)."""
        return self.e + (1.0 - self.e) * np.asarray(a, dtype=np.float64)


def densify_weights(n_nodes: int, n_edges: int, gamma: float = 1.0) -> DensifyWeights:
    N2 = float(n_nodes) * float(n_nodes)
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if n_edges <= 0 or n_edges >= N2:
        raise DegenerateGraphError(
            f"densifying weights need 0 < E < N^2 (got E={n_edges}, N={n_nodes})"
        )
    p = n_edges / N2
    e = gamma * p / (1.0 - p)
    sum_q = (1.0 + gamma) * n_edges
    return DensifyWeights(float(gamma), e, sum_q, 1.0 / sum_q, int(n_nodes), int(n_edges))


def uniform_gamma(n_nodes: int, n_edges: int) -> float:
    """The gamma at which every dyad gets weight 1 (``e = 1``)."""
    p = n_edges / (float(n_nodes) ** 2)
    return (1.0 - p) / p


def weight_matrix(A, w: DensifyWeights) -> np.ndarray:
    """Dense ``Q_A``. Test/oracle use only."""
    return w.q(A)


def weighted_frobenius_sq(D, Q=None) -> float:
    """``(1 / sum q) * sum d_ij^2 q_ij``; ``Q=None`` means all-ones."""
    D = np.asarray(D, dtype=np.float64)
    if not np.isfinite(D).all():
        raise ValueError("non-finite entries")
    if Q is None:
        return float(np.mean(D * D)) if D.size else 0.0
    Q = np.broadcast_to(np.asarray(Q, dtype=np.float64), D.shape)
    return float(np.sum(D * D * Q) / np.sum(Q))


def signal_frobenius_sq(Y) -> float:
    Y = np.asarray(Y, dtype=np.float64)
    return float(np.mean(Y * Y)) if Y.size else 0.0


def _subset_masks(n: int, start: int, stop: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.float64)


def exact_matrix_cut_norm(D, Q=None, max_n: int = 20, chunk: int = 1 << 14) -> float:
    """Exact weighted cut norm by enumerating every row subset.

    For a fixed row set U the best column set is closed-form: take all
    columns with positive (or all with negative) weighted column sums.
    """
    D = np.asarray(D, dtype=np.float64)
    n, m = D.shape
    Q = np.ones_like(D) if Q is None else np.broadcast_to(np.asarray(Q, dtype=np.float64), D.shape)
    # enumerate the smaller side
    W = D * Q
    if m < n:
        W = W.T
        n, m = m, n
    if n > max_n:
        raise ValueError(
            f"exact cut norm is exponential; N={n} exceeds max_n={max_n}, "
            "use the densifying similarity certificate instead"
        )
    best = 0.0
    total = 1 << n
    for start in range(0, total, chunk):
        S = _subset_masks(n, start, min(total, start + chunk))
        c = S @ W
        pos = np.clip(c, 0, None).sum(axis=1)
        neg = np.clip(-c, 0, None).sum(axis=1)
        best = max(best, float(np.max(np.maximum(pos, neg))))
    return best / float(np.sum(Q))


def signal_cut_norm(Y) -> float:
    """``(1/(N D)) sum_j max(sum_i y_ij^+, sum_i y_ij^-)``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.size == 0:
        return 0.0
    N, D = Y.shape
    pos = np.clip(Y, 0, None).sum(axis=0)
    neg = np.clip(-Y, 0, None).sum(axis=0)
    return float(np.maximum(pos, neg).sum() / (N * D))


def densifying_cut_similarity(A, X, C, P, gamma: float = 1.0, alpha: float = 0.5,
                              beta: float = 0.5, max_n: int = 20) -> float:
    """``alpha (1+gamma) ||A - C||_{cut; Q_A} + beta ||X - P||_cut`` (exact, small N)."""
    if not np.isclose(alpha + beta, 1.0):
        raise ValueError("alpha + beta must equal 1")
    A = np.asarray(A, dtype=np.float64)
    N = A.shape[0]
    w = densify_weights(N, int(A.sum()), gamma)
    graph_term = 0.0
    if alpha > 0:
        graph_term = (1.0 + gamma) * exact_matrix_cut_norm(A - C, w.q(A), max_n=max_n)
    signal_term = 0.0
    if beta > 0 and X is not None and np.size(X):
        signal_term = signal_cut_norm(np.asarray(X) - np.asarray(P))
    return alpha * graph_term + beta * signal_term
