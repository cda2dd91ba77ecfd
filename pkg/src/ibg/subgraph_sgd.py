"""Memory-bounded IBG fitting on random node subsets.

Each step draws M nodes with replacement, evaluates the loss on the M x M
dyads among them and updates r, F, B fully but only the sampled rows of the
affiliation logits.  The graph term is rescaled by ``N^2 / M^2`` so that the
sample covering every node once reproduces the full loss exactly; affiliation
row gradients are multiplied by ``M / N`` before the update.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import DivergenceError, FitConfig, FitResult, Grads, IbgFactors, _sigmoid_grad, \
    init_factors, loss_efficient, value_and_grads
from .norms import densify_weights
from .optim import Adam


@dataclass
class NodeSample:
    nodes: np.ndarray
    seed: int
    step: int

    @property
    def size(self) -> int:
        return self.nodes.shape[0]


def sample_nodes(n_nodes: int, m: int, seed: int = 0, step: int = 0, identity: bool = False) -> NodeSample:
    """Uniform sample with replacement, reproducible per ``(seed, step)``.

    ``identity=True`` (test hook, requires ``m == n_nodes``) returns ``0..N-1``.
    """
    if not 1 <= m <= n_nodes:
        raise ValueError(f"sample size must satisfy 1 <= M <= N, got M={m}, N={n_nodes}")
    if identity:
        if m != n_nodes:
            raise ValueError("identity sampling needs M == N")
        return NodeSample(np.arange(n_nodes), seed, step)
    rng = np.random.default_rng([seed, step])
    return NodeSample(rng.integers(0, n_nodes, m), seed, step)


@dataclass
class SampleGrads:
    """Gradients of the sub-loss; ``rows`` are the unique sampled nodes and
    ``u_rows``/``v_rows`` the matching logit-gradient rows (duplicates summed)."""

    rows: np.ndarray
    u_rows: np.ndarray
    v_rows: np.ndarray
    r: np.ndarray
    F: np.ndarray
    B: np.ndarray


def subgraph_loss_and_grads(graph, f: IbgFactors, cfg, s: NodeSample):
    """Sub-loss on the sampled dyads and its gradients; O(M^2 K + M K D), no N x N arrays."""
    N, M = graph.n_nodes, s.size
    n = s.nodes
    w = densify_weights(N, graph.n_edges, cfg.gamma)
    scale = cfg.alpha * (1.0 + cfg.gamma) * w.mu * (N * N) / (M * M)

    ul, vl = f.u_logit[n], f.v_logit[n]
    Un, Vn = 1.0 / (1.0 + np.exp(-np.clip(ul, -30, 30))), 1.0 / (1.0 + np.exp(-np.clip(vl, -30, 30)))
    r = f.r
    Cn = (Un * r) @ Vn.T
    An = graph.has_edges(n[:, None], n[None, :]).astype(np.float64)
    Qn = w.q(An)
    diff = Cn - An
    graph_term = scale * float(np.sum(diff * diff * Qn))

    dC = (2.0 * scale) * diff * Qn
    dCV = dC @ Vn
    dU = dCV * r
    dV = (dC.T @ Un) * r
    dr = np.einsum("mk,mk->k", Un, dCV)

    signal_term = 0.0
    dF = np.zeros_like(f.F)
    dB = np.zeros_like(f.B)
    D = graph.n_features
    if D and cfg.beta > 0:
        resid = Un @ f.F + Vn @ f.B - graph.X[n]
        signal_term = cfg.beta * float(np.mean(resid * resid))
        dP = (2.0 * cfg.beta / resid.size) * resid
        dU += dP @ f.F.T
        dV += dP @ f.B.T
        dF = Un.T @ dP
        dB = Vn.T @ dP

    du_logit = dU * _sigmoid_grad(ul, Un)
    dv_logit = dV * _sigmoid_grad(vl, Vn)
    rows, inv = np.unique(n, return_inverse=True)
    u_rows = np.zeros((rows.size, f.rank))
    v_rows = np.zeros((rows.size, f.rank))
    np.add.at(u_rows, inv, du_logit)
    np.add.at(v_rows, inv, dv_logit)
    return graph_term + signal_term, SampleGrads(rows, u_rows, v_rows, dr, dF, dB)


def fit_sgd(graph, cfg: FitConfig, sample_size: int, steps: int, init: IbgFactors | None = None,
            identity: bool = False, eval_every: int = 0) -> FitResult:
    """Subgraph SGD with lazy (row-sparse) Adam on the affiliation logits.

    The loss trace holds the full sparse loss at the start, every
    ``eval_every`` steps (0 = start and end only) and at the end.
    """
    t0 = time.perf_counter()
    f = init.copy() if init is not None else init_factors(graph, cfg)
    N, M = graph.n_nodes, sample_size
    opt = Adam(f.params(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps)
    trace = [loss_efficient(graph, f, cfg)]
    row_scale = M / N
    for step in range(steps):
        s = sample_nodes(N, M, cfg.seed, step, identity=identity)
        loss, g = subgraph_loss_and_grads(graph, f, cfg, s)
        if not np.isfinite(loss):
            raise DivergenceError(f"sub-loss became non-finite at step {step}")
        opt.tick()
        opt.update_rows("u_logit", g.rows, row_scale * g.u_rows)
        opt.update_rows("v_logit", g.rows, row_scale * g.v_rows)
        opt.update("r", g.r)
        opt.update("F", g.F)
        opt.update("B", g.B)
        if eval_every and (step + 1) % eval_every == 0 and step + 1 < steps:
            trace.append(loss_efficient(graph, f, cfg))
    gterm, sterm, _ = value_and_grads(graph, f, cfg, need_grad=False)
    if not np.isfinite(gterm + sterm):
        raise DivergenceError("final loss is non-finite")
    if steps:
        trace.append(gterm + sterm)
    return FitResult(f, trace, gterm, sterm, time.perf_counter() - t0, steps)


def full_grads_as_sample(graph, f, cfg) -> Grads:
    """Full-loss gradients, for comparing against sampled estimates."""
    return value_and_grads(graph, f, cfg)[2]
