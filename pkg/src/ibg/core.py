"""The IBG model, its densifying loss (dense oracle and sparse form), gradients and fitter.

Loss convention::

    L = alpha (1 + gamma) ||A - U diag(r) V^T||^2_{F; Q_A} + beta ||X - U F - V B||^2_F

with ``||.||_{F;Q}`` normalised by the total weight and the signal norm
normalised by ``N D``.  Since the total weight is ``(1 + gamma) E`` the graph
term equals ``(alpha / E) * sum_ij q_ij (a_ij - c_ij)^2``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .graph_io import DirectedGraphSignal
from .norms import densify_weights, signal_frobenius_sq, weighted_frobenius_sq
from .optim import Adam

LOGIT_CLAMP = 30.0
EDGE_CHUNK = 1 << 16


class DivergenceError(RuntimeError):
    pass


def sigmoid(x):
    x = np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def logit(p, eps: float = 1e-6):
    p = np.clip(p, eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def _sigmoid_grad(logits, s):
    # clip has zero derivative outside the clamp window
    return s * (1.0 - s) * (np.abs(logits) < LOGIT_CLAMP)


@dataclass
class IbgFactors:
    """Affiliation logits ``u_logit``/``v_logit`` (N x K), magnitudes ``r`` (K)
    and community features ``F``/``B`` (K x D).

    ``C = U diag(r) V^T`` with ``U = sigmoid(u_logit)`` indexing rows (edge
    sources) and ``V`` indexing columns (edge targets); ``P = U F + V B``.
    """

    u_logit: np.ndarray
    v_logit: np.ndarray
    r: np.ndarray
    F: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.u_logit = np.array(self.u_logit, dtype=np.float64, ndmin=2)
        self.v_logit = np.array(self.v_logit, dtype=np.float64, ndmin=2)
        self.r = np.array(self.r, dtype=np.float64).ravel()
        K = self.r.shape[0]
        if K < 1:
            raise ValueError("need at least one community")
        N = self.u_logit.shape[0]
        self.F = np.array(self.F, dtype=np.float64).reshape(K, -1)
        self.B = np.array(self.B, dtype=np.float64).reshape(K, -1)
        if self.u_logit.shape != (N, K) or self.v_logit.shape != (N, K):
            raise ValueError(f"affiliation logits must be {N}x{K}")
        if self.F.shape != self.B.shape:
            raise ValueError("F and B must have the same shape")

    @property
    def U(self) -> np.ndarray:
        return sigmoid(self.u_logit)

    @property
    def V(self) -> np.ndarray:
        return sigmoid(self.v_logit)

    @property
    def n_nodes(self) -> int:
        return self.u_logit.shape[0]

    @property
    def rank(self) -> int:
        return self.r.shape[0]

    @property
    def n_features(self) -> int:
        return self.F.shape[1]

    def copy(self) -> "IbgFactors":
        return IbgFactors(self.u_logit.copy(), self.v_logit.copy(), self.r.copy(),
                          self.F.copy(), self.B.copy())

    def params(self) -> dict:
        return {"u_logit": self.u_logit, "v_logit": self.v_logit, "r": self.r,
                "F": self.F, "B": self.B}

    def permute(self, perm) -> "IbgFactors":
        perm = np.asarray(perm)
        return IbgFactors(self.u_logit[:, perm], self.v_logit[:, perm], self.r[perm],
                          self.F[perm], self.B[perm])

    def with_zero_community(self, rng=None) -> "IbgFactors":
        """Append a community with ``r = 0`` and zero features; C and P are unchanged."""
        rng = np.random.default_rng(rng)
        N, D = self.n_nodes, self.n_features
        col_u = rng.normal(0.0, 1.0, (N, 1))
        col_v = rng.normal(0.0, 1.0, (N, 1))
        return IbgFactors(
            np.hstack([self.u_logit, col_u]),
            np.hstack([self.v_logit, col_v]),
            np.append(self.r, 0.0),
            np.vstack([self.F, np.zeros((1, D))]),
            np.vstack([self.B, np.zeros((1, D))]),
        )


@dataclass
class Grads:
    u_logit: np.ndarray
    v_logit: np.ndarray
    r: np.ndarray
    F: np.ndarray
    B: np.ndarray

    def as_dict(self) -> dict:
        return {"u_logit": self.u_logit, "v_logit": self.v_logit, "r": self.r,
                "F": self.F, "B": self.B}


@dataclass
class FitConfig:
    k: int = 8
    gamma: float = 1.0
    alpha: float = 0.5
    beta: float = 0.5
    lr: float = 0.03
    epochs: int = 1000
    seed: int = 0
    init: str = "svd"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    svd_sample_ratio: float = 1.0
    svd_iters: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"rank k must be >= 1, got {self.k}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.alpha < 0 or self.beta < 0 or not np.isclose(self.alpha + self.beta, 1.0):
            raise ValueError(f"need alpha, beta >= 0 with alpha + beta = 1 (got {self.alpha}, {self.beta})")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.init not in ("svd", "random"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if not 0 < self.svd_sample_ratio <= 1:
            raise ValueError("svd sample ratio must lie in (0, 1]")


@dataclass
class FitResult:
    factors: IbgFactors
    loss_trace: list
    graph_term: float
    signal_term: float
    seconds: float
    best_epoch: int = 0

    @property
    def initial_loss(self) -> float:
        return self.loss_trace[0]

    @property
    def loss(self) -> float:
        return self.graph_term + self.signal_term


def synthesize(f: IbgFactors, max_nodes: int = 5000):
    """Dense ``(C, P)``; guarded because C is N x N."""
    if f.n_nodes > max_nodes:
        raise MemoryError(f"refusing to materialise a {f.n_nodes} x {f.n_nodes} IBG")
    U, V = f.U, f.V
    return (U * f.r) @ V.T, U @ f.F + V @ f.B


def _check_signal(graph: DirectedGraphSignal, f: IbgFactors):
    if f.n_nodes != graph.n_nodes:
        raise ValueError(f"factors have {f.n_nodes} nodes, graph has {graph.n_nodes}")
    if f.n_features != graph.n_features:
        raise ValueError(f"factors carry {f.n_features} features, graph has {graph.n_features}")


def loss_naive(graph: DirectedGraphSignal, f: IbgFactors, cfg, max_nodes: int = 2000) -> float:
    """Dense O(N^2) evaluation of the loss, used as a reference."""
    _check_signal(graph, f)
    A = graph.dense_adjacency(max_nodes)
    C, P = synthesize(f, max_nodes)
    w = densify_weights(graph.n_nodes, graph.n_edges, cfg.gamma)
    loss = cfg.alpha * (1.0 + cfg.gamma) * weighted_frobenius_sq(A - C, w.q(A))
    if graph.n_features:
        loss += cfg.beta * signal_frobenius_sq(graph.X - P)
    return loss


def _edge_values(U_r, V, src, dst):
    """``c_e = U_r[src_e] . V[dst_e]`` in bounded-memory chunks."""
    out = np.empty(src.shape[0])
    for s in range(0, src.shape[0], EDGE_CHUNK):
        sl = slice(s, s + EDGE_CHUNK)
        out[sl] = np.einsum("ek,ek->e", U_r[src[sl]], V[dst[sl]])
    return out


def value_and_grads(graph: DirectedGraphSignal, f: IbgFactors, cfg, need_grad: bool = True):
    """Sparse + low-rank evaluation in O(K^2 N + K E) time, O(K N + E) memory.

    Returns ``(graph_term, signal_term, Grads | None)``.
    """
    _check_signal(graph, f)
    w = densify_weights(graph.n_nodes, graph.n_edges, cfg.gamma)
    e, E = w.e, graph.n_edges
    scale = cfg.alpha / E
    U, V, r = f.U, f.V, f.r
    Ur, Vr = U * r, V * r
    Gu, Gv = U.T @ U, V.T @ V
    H = Gu * Gv
    trace = r @ H @ r
    c = _edge_values(Ur, V, graph.src, graph.dst)
    S = E + e * trace - 2.0 * c.sum() + (1.0 - e) * (c @ c)
    graph_term = scale * S

    D = graph.n_features
    signal_term = 0.0
    resid = None
    if D and cfg.beta > 0:
        resid = U @ f.F + V @ f.B - graph.X
        signal_term = cfg.beta * float(np.mean(resid * resid))
    if not need_grad:
        return graph_term, signal_term, None

    G = graph.edge_matrix(scale * (2.0 * (1.0 - e) * c - 2.0))
    GV, GtU = G @ V, G.T @ U
    dU = (2.0 * scale * e) * ((Ur @ Gv) * r) + GV * r
    dV = (2.0 * scale * e) * ((Vr @ Gu) * r) + GtU * r
    dr = (2.0 * scale * e) * (H @ r) + np.einsum("nk,nk->k", U, GV)
    dF = np.zeros_like(f.F)
    dB = np.zeros_like(f.B)
    if resid is not None:
        dP = (2.0 * cfg.beta / resid.size) * resid
        dU += dP @ f.F.T
        dV += dP @ f.B.T
        dF = U.T @ dP
        dB = V.T @ dP
    grads = Grads(dU * _sigmoid_grad(f.u_logit, U), dV * _sigmoid_grad(f.v_logit, V), dr, dF, dB)
    return graph_term, signal_term, grads


def loss_efficient(graph: DirectedGraphSignal, f: IbgFactors, cfg) -> float:
    g, s, _ = value_and_grads(graph, f, cfg, need_grad=False)
    return g + s


def grads(graph: DirectedGraphSignal, f: IbgFactors, cfg) -> Grads:
    return value_and_grads(graph, f, cfg)[2]


def random_factors(n_nodes: int, k: int, n_features: int = 0, seed=None) -> IbgFactors:
    rng = np.random.default_rng(seed)
    return IbgFactors(
        rng.normal(0.0, 1.0, (n_nodes, k)),
        rng.normal(0.0, 1.0, (n_nodes, k)),
        rng.normal(0.0, 0.1, k),
        np.zeros((k, n_features)),
        np.zeros((k, n_features)),
    )


def init_factors(graph: DirectedGraphSignal, cfg: FitConfig, seed=None) -> IbgFactors:
    seed = cfg.seed if seed is None else seed
    if cfg.init == "random":
        return random_factors(graph.n_nodes, cfg.k, graph.n_features, seed)
    from .svd_init import init_from_graph

    return init_from_graph(graph, cfg.k, seed=seed, sample_ratio=cfg.svd_sample_ratio,
                           iters=cfg.svd_iters)


def fit_full(graph: DirectedGraphSignal, cfg: FitConfig, init: IbgFactors | None = None) -> FitResult:
    """Full-batch Adam on the sparse loss; returns the best iterate seen (never worse than the start)."""
    t0 = time.perf_counter()
    f = init.copy() if init is not None else init_factors(graph, cfg)
    opt = Adam(f.params(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps)
    gterm, sterm, g = value_and_grads(graph, f, cfg)
    trace = [gterm + sterm]
    best = (gterm + sterm, gterm, sterm, f.copy(), 0)
    for epoch in range(1, cfg.epochs + 1):
        opt.step(g.as_dict())
        gterm, sterm, g = value_and_grads(graph, f, cfg)
        loss = gterm + sterm
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at epoch {epoch} (lr={cfg.lr})")
        trace.append(loss)
        if loss < best[0]:
            best = (loss, gterm, sterm, f.copy(), epoch)
    return FitResult(best[3], trace, best[1], best[2], time.perf_counter() - t0, best[4])


@dataclass
class EtaEstimate:
    k: int
    eta: float
    loss: float
    factors: IbgFactors = field(repr=False)
    delta: float = 0.3


def eta_estimate(graph: DirectedGraphSignal, k: int, cfg: FitConfig, restarts: int = 3,
                 delta: float = 0.3, warm_start: IbgFactors | None = None) -> EtaEstimate:
    """``(1 + delta) * best loss`` at rank ``k`` over restarts.

    Restart 0 uses ``cfg.init``, the others random init.  With ``warm_start``
    (a rank ``k - 1`` fit) one extra run starts from it plus a zero
    community, so the estimate can never exceed the warm start's loss.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    best = None
    for i in range(restarts):
        sub = replace(cfg, k=k, seed=cfg.seed + i, init=cfg.init if i == 0 else "random")
        res = fit_full(graph, sub)
        if best is None or res.loss < best.loss:
            best = res
    if warm_start is not None:
        if warm_start.rank != k - 1:
            raise ValueError("warm start must have rank k - 1")
        init = warm_start.with_zero_community(cfg.seed + 7919 * k)
        res = fit_full(graph, replace(cfg, k=k), init=init)
        if best is None or res.loss < best.loss:
            best = res
    return EtaEstimate(k, (1.0 + delta) * best.loss, best.loss, best.factors, delta)


def eta_pair(graph, m: int, cfg: FitConfig, restarts: int = 3, delta: float = 0.3):
    """Estimates at ranks ``m`` and ``m + 1``, the latter warm-started from the former."""
    lo = eta_estimate(graph, m, cfg, restarts, delta)
    hi = eta_estimate(graph, m + 1, cfg, restarts, delta, warm_start=lo.factors)
    return lo, hi


def eta_path(graph, k_max: int, cfg: FitConfig, restarts: int = 3, delta: float = 0.3):
    """Nested estimates for ranks ``1..k_max``; non-increasing by construction."""
    path, prev = [], None
    for k in range(1, k_max + 1):
        est = eta_estimate(graph, k, cfg, restarts, delta, warm_start=prev)
        path.append(est)
        prev = est.factors
    return path
