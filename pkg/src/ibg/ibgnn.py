"""Signal processing on fixed IBG factors and the two-branch IBG-NN node classifier.

Every layer reads nodes only through ``N x K`` affiliations, so one layer
costs ``O(N K D + N D^2)`` and never touches the edge list.  Gradients are
written out by hand.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .optim import Adam

RIDGE = 1e-8


def analysis(X, W, eps: float = RIDGE):
    """Community-space projection ``(W^T W + eps I)^{-1} W^T X`` (K x D)."""
    W = np.asarray(W, dtype=np.float64)
    G = W.T @ W
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > 1e12:
        warnings.warn(f"affiliation Gram matrix is ill-conditioned (cond={cond:.3g})",
                      RuntimeWarning, stacklevel=2)
    return np.linalg.solve(G + eps * np.eye(G.shape[0]), W.T @ np.asarray(X, dtype=np.float64))


def synthesis(G, W):
    """Node-space signal ``W G`` (N x D)."""
    return np.asarray(W, dtype=np.float64) @ np.asarray(G, dtype=np.float64)


@dataclass
class IbgnnConfig:
    layers: int = 2
    hidden: int = 64
    dropout: float = 0.0
    residual: bool = False
    jk: str = "none"
    deepsets: bool = False
    lr: float = 0.01
    epochs: int = 200
    weight_decay: float = 0.0
    seed: int = 0
    analysis_init: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.jk not in ("none", "max", "cat"):
            raise ValueError(f"unknown jumping-knowledge mode {self.jk!r}")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("need epochs >= 0 and lr > 0")


@dataclass
class IbgnnModel:
    """Parameters live in one flat dict so the optimiser can treat them uniformly.

    Per layer ``l`` and branch ``b`` in ``{s, t}``: ``{b}{l}.W1``, ``{b}{l}.b``
    (and ``{b}{l}.W2`` with DeepSets) for the node map, ``{b}{l}.T1``
    (``{b}{l}.T2``) for the community map, and the community features
    ``B{l}`` (source branch) / ``F{l}`` (target branch).
    """

    params: dict
    widths: list
    n_classes: int
    deepsets: bool = False
    residual: bool = False
    jk: str = "none"
    dropout: float = 0.0

    @property
    def layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def init_model(n_features: int, n_classes: int, k: int, cfg: IbgnnConfig, factors=None, X=None,
               hidden_widths=None) -> IbgnnModel:
    """Random model; with ``cfg.analysis_init`` the first layer's community
    features start at the analysis of ``X`` onto ``U`` and ``V``."""
    rng = np.random.default_rng(cfg.seed)
    widths = [n_features] + list(hidden_widths or [cfg.hidden] * cfg.layers)
    p = {}
    for l in range(len(widths) - 1):
        d_in, d_out = widths[l], widths[l + 1]
        for b in "st":
            p[f"{b}{l}.W1"] = _glorot(rng, d_in, d_out)
            p[f"{b}{l}.b"] = np.zeros(d_out)
            p[f"{b}{l}.T1"] = _glorot(rng, d_in, d_out)
            if cfg.deepsets:
                p[f"{b}{l}.W2"] = _glorot(rng, d_in, d_out)
                p[f"{b}{l}.T2"] = _glorot(rng, d_in, d_out)
        p[f"B{l}"] = rng.normal(0.0, 0.1, (k, d_in))
        p[f"F{l}"] = rng.normal(0.0, 0.1, (k, d_in))
    if cfg.analysis_init and factors is not None and X is not None and n_features:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            p["B0"] = analysis(X, factors.V)
            p["F0"] = analysis(X, factors.U)
    d_read = sum(widths[1:]) if cfg.jk == "cat" else widths[-1]
    p["out.W"] = _glorot(rng, d_read, n_classes)
    p["out.b"] = np.zeros(n_classes)
    return IbgnnModel(p, widths, n_classes, cfg.deepsets, cfg.residual, cfg.jk, cfg.dropout)


def _set_map(H, W1, W2, b=None):
    """``H W1 + mean(H) W2 (+ b)``; ``W2=None`` is a plain linear map."""
    out = H @ W1
    if W2 is not None:
        out = out + H.mean(axis=0) @ W2
    if b is not None:
        out = out + b
    return out


def _set_map_back(H, dOut, W1, W2):
    """Returns ``(dH, dW1, dW2, db)`` for :func:`_set_map`."""
    col = dOut.sum(axis=0)
    dH = dOut @ W1.T
    dW2 = None
    if W2 is not None:
        dH = dH + (col @ W2.T) / H.shape[0]
        dW2 = np.outer(H.mean(axis=0), col)
    return dH, H.T @ dOut, dW2, col


def forward(model: IbgnnModel, X, factors, train: bool = False, rng=None):
    """Class logits and the cache needed by :func:`backward`."""
    p = model.params
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.widths[0]:
        raise ValueError(f"model expects {model.widths[0]} features, got {X.shape[1]}")
    U, V = factors.U, factors.V
    if U.shape[0] != X.shape[0]:
        raise ValueError("factors and signal disagree on the node count")
    comm = {"s": V, "t": U}
    feat = {"s": "B", "t": "F"}
    H = {"s": X, "t": X}
    cache = {"U": U, "V": V, "layers": [], "X": X}
    outs = []
    for l in range(model.layers):
        rec = {}
        for b in "st":
            Y = comm[b] @ p[f"{feat[b]}{l}"]
            Z = _set_map(H[b], p[f"{b}{l}.W1"], p.get(f"{b}{l}.W2"), p[f"{b}{l}.b"]) \
                + _set_map(Y, p[f"{b}{l}.T1"], p.get(f"{b}{l}.T2"))
            out = np.maximum(Z, 0.0)
            mask = None
            if train and model.dropout > 0:
                mask = (rng.random(out.shape) >= model.dropout) / (1.0 - model.dropout)
                out = out * mask
            res = model.residual and out.shape == H[b].shape
            if res:
                out = out + H[b]
            rec[b] = {"H": H[b], "Y": Y, "Z": Z, "mask": mask, "res": res}
            H[b] = out
        cache["layers"].append(rec)
        outs.append(H["s"] + H["t"])
    if model.jk == "none":
        R = outs[-1]
    elif model.jk == "max":
        stack = np.stack(outs)
        arg = np.argmax(stack, axis=0)
        cache["jk_arg"] = arg
        R = np.take_along_axis(stack, arg[None], axis=0)[0]
    else:
        R = np.hstack(outs)
    cache["R"] = R
    cache["outs_shapes"] = [o.shape[1] for o in outs]
    logits = R @ p["out.W"] + p["out.b"]
    return logits, cache


def backward(model: IbgnnModel, cache, dlogits) -> dict:
    """Gradients of every parameter given ``d loss / d logits``."""
    p = model.params
    g = {k: np.zeros_like(v) for k, v in p.items()}
    g["out.W"] = cache["R"].T @ dlogits
    g["out.b"] = dlogits.sum(axis=0)
    dR = dlogits @ p["out.W"].T
    L = model.layers
    if model.jk == "none":
        douts = [None] * (L - 1) + [dR]
    elif model.jk == "max":
        arg = cache["jk_arg"]
        douts = [np.where(arg == l, dR, 0.0) for l in range(L)]
    else:
        edges = np.cumsum([0] + cache["outs_shapes"])
        douts = [dR[:, edges[l]:edges[l + 1]] for l in range(L)]

    comm = {"s": cache["V"], "t": cache["U"]}
    feat = {"s": "B", "t": "F"}
    dH = {"s": None, "t": None}
    for l in reversed(range(L)):
        rec = cache["layers"][l]
        for b in "st":
            d = dH[b]
            if douts[l] is not None:
                d = douts[l] if d is None else d + douts[l]
            if d is None:
                dH[b] = None
                continue
            r = rec[b]
            dIn = d if r["res"] else None
            dZ = d if r["mask"] is None else d * r["mask"]
            dZ = dZ * (r["Z"] > 0)
            dHin, dW1, dW2, db = _set_map_back(r["H"], dZ, p[f"{b}{l}.W1"], p.get(f"{b}{l}.W2"))
            g[f"{b}{l}.W1"] += dW1
            g[f"{b}{l}.b"] += db
            if dW2 is not None:
                g[f"{b}{l}.W2"] += dW2
            dY, dT1, dT2, _ = _set_map_back(r["Y"], dZ, p[f"{b}{l}.T1"], p.get(f"{b}{l}.T2"))
            g[f"{b}{l}.T1"] += dT1
            if dT2 is not None:
                g[f"{b}{l}.T2"] += dT2
            g[f"{feat[b]}{l}"] += comm[b].T @ dY
            dH[b] = dHin if dIn is None else dHin + dIn
    return g


def softmax_xent(logits, labels, mask):
    """Mean cross-entropy over ``mask`` and its gradient w.r.t. all logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = np.flatnonzero(mask)
    n = max(idx.size, 1)
    loss = -float(logp[idx, labels[idx]].sum()) / n
    d = np.zeros_like(logits)
    d[idx] = np.exp(logp[idx])
    d[idx, labels[idx]] -= 1.0
    return loss, d / n


def accuracy(logits, labels, mask) -> float:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


@dataclass
class TrainResult:
    model: IbgnnModel
    metrics: dict
    loss_trace: list = field(default_factory=list)
    best_epoch: int = 0


def train_node_classifier(graph, factors, cfg: IbgnnConfig, masks=None) -> TrainResult:
    """Adam on the train-mask cross-entropy; keeps the epoch with the best
    validation accuracy (lower validation loss breaks ties)."""
    if graph.labels is None:
        raise ValueError("node classification needs labels")
    masks = masks if masks is not None else graph.masks
    if masks is None or "train" not in masks:
        raise ValueError("node classification needs at least a train mask")
    X = graph.X if graph.n_features else np.zeros((graph.n_nodes, 0))
    if X.size and np.abs(X).max() > 1.0:
        raise ValueError("signal values must lie in [-1, 1]; normalise the features first")
    labels = np.asarray(graph.labels, dtype=np.int64)
    C = int(labels.max()) + 1
    model = init_model(X.shape[1], C, factors.rank, cfg, factors, X)
    opt = Adam(model.params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    val = masks.get("val", masks["train"])

    def evaluate():
        logits, _ = forward(model, X, factors)
        return logits, accuracy(logits, labels, val), softmax_xent(logits, labels, val)[0]

    logits, best_acc, best_vloss = evaluate()
    best = ({k: v.copy() for k, v in model.params.items()}, 0, logits)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        out, cache = forward(model, X, factors, train=True, rng=rng)
        loss, dl = softmax_xent(out, labels, masks["train"])
        trace.append(loss)
        g = backward(model, cache, dl)
        if cfg.weight_decay:
            for k in g:
                g[k] += cfg.weight_decay * model.params[k]
        opt.step(g)
        logits, acc, vloss = evaluate()
        if acc > best_acc or (acc == best_acc and vloss < best_vloss):
            best_acc, best_vloss = acc, vloss
            best = ({k: v.copy() for k, v in model.params.items()}, epoch, logits)
    for k, v in best[0].items():
        model.params[k][...] = v
    metrics = {f"{name}_acc": accuracy(best[2], labels, m) for name, m in masks.items()}
    return TrainResult(model, metrics, trace, best[1])


def predict(model: IbgnnModel, X, factors) -> np.ndarray:
    return np.argmax(forward(model, X, factors)[0], axis=1)
