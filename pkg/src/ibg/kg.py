"""IbgE: intersecting-block knowledge-graph completion.

A triple ``(h, rel, t)`` gets the block score ``s = sum_k u_hk m_k,rel v_tk``
and the weighted distance ``d = q_ht (1 - s)^2 / Z``, i.e. how far the model
is from calling the triple true.  ``q_ht`` is 1 on head/tail pairs linked by
any training relation and ``e`` elsewhere; ``Z = (1 + gamma) E / N^2`` puts a
uniformly weighted dyad on unit scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .core import logit, sigmoid, _sigmoid_grad
from .graph_io import GraphFormatError
from .optim import Adam

SPLITS = ("train", "valid", "test")
DENSE_LOOKUP_LIMIT = 1 << 24
DENSE_SCORE_FACTOR = 16


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class KnowledgeGraph:
    """Integer triples ``(head, relation, tail)`` per split plus the name tables."""

    entities: list
    relations: list
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))

    def __post_init__(self):
        N, R = len(self.entities), len(self.relations)
        for name in SPLITS:
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 3)
            if arr.size and (arr.min() < 0 or arr[:, [0, 2]].max() >= N or arr[:, 1].max() >= R):
                raise ValueError(f"{name} triples reference unknown ids")
            setattr(self, name, arr)
        keys = self.keys(self.train)
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate training triples")
        self._train_keys = np.sort(keys)
        self._dyads = np.unique(self.train[:, 0] * N + self.train[:, 2])
        # small key spaces get direct lookup tables instead of binary search
        self._train_table = self._dyad_table = None
        if N * N * R <= DENSE_LOOKUP_LIMIT:
            self._train_table = np.zeros(N * N * R, dtype=bool)
            self._train_table[self._train_keys] = True
            self._dyad_table = np.zeros(N * N, dtype=bool)
            self._dyad_table[self._dyads] = True

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_train(self) -> int:
        return self.train.shape[0]

    def keys(self, triples) -> np.ndarray:
        t = np.asarray(triples, dtype=np.int64)
        return (t[..., 0] * self.n_relations + t[..., 1]) * self.n_entities + t[..., 2]

    def is_train(self, triples) -> np.ndarray:
        k = self.keys(triples)
        if self._train_table is not None:
            return self._train_table[k]
        pos = np.searchsorted(self._train_keys, k)
        pos = np.minimum(pos, self._train_keys.size - 1)
        return self._train_keys[pos] == k

    def linked(self, heads, tails) -> np.ndarray:
        """True where some training relation links ``head -> tail``."""
        k = np.asarray(heads, dtype=np.int64) * self.n_entities + np.asarray(tails, dtype=np.int64)
        if self._dyad_table is not None:
            return self._dyad_table[k]
        pos = np.minimum(np.searchsorted(self._dyads, k), self._dyads.size - 1)
        return self._dyads[pos] == k


def _read_triples(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 3:
                raise GraphFormatError(f"{path}:{lineno}: expected 'head relation tail'")
            rows.append(parts)
    return rows


def load_triples_dir(directory) -> KnowledgeGraph:
    """Read ``train.txt`` (required), ``valid.txt`` and ``test.txt`` of name triples.

    Ids are assigned in order of first appearance across the splits.
    """
    d = Path(directory)
    raw = {}
    for name in SPLITS:
        p = d / f"{name}.txt"
        if name == "train" and not p.exists():
            raise FileNotFoundError(p)
        raw[name] = _read_triples(p) if p.exists() else []
    ent, rel = {}, {}
    for name in SPLITS:
        for h, r, t in raw[name]:
            ent.setdefault(h, len(ent))
            rel.setdefault(r, len(rel))
            ent.setdefault(t, len(ent))
    arrays = {name: np.array([[ent[h], rel[r], ent[t]] for h, r, t in raw[name]], np.int64).reshape(-1, 3)
              for name in SPLITS}
    return KnowledgeGraph(list(ent), list(rel), **arrays)


def write_dictionaries(directory, kg: KnowledgeGraph) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "entities.dict").write_text("".join(f"{i}\t{n}\n" for i, n in enumerate(kg.entities)), encoding="utf-8")
    (d / "relations.dict").write_text("".join(f"{i}\t{n}\n" for i, n in enumerate(kg.relations)), encoding="utf-8")


@dataclass
class IbgeFactors:
    u_logit: np.ndarray
    v_logit: np.ndarray
    M: np.ndarray
    gamma: float = 1.0
    margin: float = 1.0
    n_neg: int = 64

    def __post_init__(self):
        self.u_logit = np.asarray(self.u_logit, dtype=np.float64)
        self.v_logit = np.asarray(self.v_logit, dtype=np.float64)
        self.M = np.asarray(self.M, dtype=np.float64)
        N, K = self.u_logit.shape
        if K < 1 or self.v_logit.shape != (N, K) or self.M.ndim != 2 or self.M.shape[0] != K:
            raise ValueError("inconsistent IbgE factor shapes")
        if self.gamma <= 0 or self.margin <= 0 or self.n_neg < 1:
            raise ValueError("need gamma > 0, margin > 0 and at least one negative sample")

    @property
    def U(self):
        return sigmoid(self.u_logit)

    @property
    def V(self):
        return sigmoid(self.v_logit)

    @property
    def rank(self) -> int:
        return self.M.shape[0]

    def params(self) -> dict:
        return {"u_logit": self.u_logit, "v_logit": self.v_logit, "M": self.M}

    def copy(self) -> "IbgeFactors":
        return IbgeFactors(self.u_logit.copy(), self.v_logit.copy(), self.M.copy(),
                           self.gamma, self.margin, self.n_neg)


@dataclass(frozen=True)
class KgWeights:
    e: float
    Z: float

    @classmethod
    def from_counts(cls, n_entities: int, n_train: int, gamma: float) -> "KgWeights":
        p = n_train / float(n_entities) ** 2
        if not 0 < p < 1:
            raise ValueError("need 0 < E < N^2 training triples")
        return cls(gamma * p / (1.0 - p), (1.0 + gamma) * p)

    def q(self, linked):
        return self.e + (1.0 - self.e) * np.asarray(linked, dtype=np.float64)


def kg_weights(kg: KnowledgeGraph, gamma: float) -> KgWeights:
    return KgWeights.from_counts(kg.n_entities, kg.n_train, gamma)


def block_score(f: IbgeFactors, triples) -> np.ndarray:
    t = np.asarray(triples, dtype=np.int64)
    flat = t.reshape(-1, 3)
    s = np.einsum("ik,ik,ik->i", f.U[flat[:, 0]], f.M[:, flat[:, 1]].T, f.V[flat[:, 2]])
    return s.reshape(t.shape[:-1])


def score(f: IbgeFactors, triples, q, Z: float, is_true=True) -> np.ndarray:
    """Distance ``d = q (delta - s)^2 / Z`` with ``delta = 1`` for ``is_true``."""
    s = block_score(f, triples)
    delta = np.asarray(is_true, dtype=np.float64)
    return np.asarray(q) * (delta - s) ** 2 / Z


def margin_terms(d_pos, d_neg, margin: float):
    """Per-positive loss and its derivatives w.r.t. ``d_pos`` and each ``d_neg``."""
    d_neg = np.asarray(d_neg, dtype=np.float64)
    zeta = d_neg.shape[-1]
    loss = -_log_sigmoid(margin - d_pos) - _log_sigmoid(d_neg - margin).sum(axis=-1) / zeta
    return loss, _sig(d_pos - margin), -_sig(margin - d_neg) / zeta


def _scatter_rows(idx, rows, n):
    """``out[idx[i]] += rows[i]``; a one-hot sparse product beats ``np.add.at`` here."""
    hot = sparse.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n, idx.size))
    return np.asarray(hot @ rows)


def _dense_scores(f: IbgeFactors):
    """All block scores at once, shape (R, N, N): ``S[r, h, t] = sum_k U[h,k] M[k,r] V[t,k]``."""
    U, V = f.U, f.V
    return (U[None, :, :] * f.M.T[:, None, :]) @ V.T, U, V


def _loss_and_grads(f: IbgeFactors, w: KgWeights, kg_linked, pos, neg):
    """Mean margin loss over a batch of positives (B x 3) with negatives (B x zeta x 3)."""
    trip = np.concatenate([pos[:, None, :], neg], axis=1).reshape(-1, 3)
    h, r, t = trip[:, 0], trip[:, 1], trip[:, 2]
    N, R = f.u_logit.shape[0], f.M.shape[1]
    # small graphs: score every (r, h, t) by batched matmul and scatter the
    # per-triple gradients into a dense tensor; otherwise work per triple
    dense = R * N * N <= DENSE_SCORE_FACTOR * trip.shape[0]
    if dense:
        S, U, V = _dense_scores(f)
        flat = (r * N + h) * N + t
        s = S.reshape(-1)[flat]
    else:
        U, V = f.U, f.V
        Uh, Vt, Mr = U[h], V[t], np.ascontiguousarray(f.M.T)[r]
        s = np.einsum("ik,ik,ik->i", Uh, Mr, Vt)
    q = w.q(kg_linked(h, t))
    d = (q * (1.0 - s) ** 2 / w.Z).reshape(pos.shape[0], -1)
    loss, g_pos, g_neg = margin_terms(d[:, 0], d[:, 1:], f.margin)
    B = pos.shape[0]
    gd = np.concatenate([g_pos[:, None], g_neg], axis=1).ravel() / B
    gs = gd * (-2.0 * q * (1.0 - s) / w.Z)
    if dense:
        G = np.bincount(flat, weights=gs, minlength=R * N * N).reshape(R, N, N)
        GV = G @ V
        GtU = G.transpose(0, 2, 1) @ U
        Mt = f.M.T[:, None, :]
        dU = (GV * Mt).sum(axis=0)
        dV = (GtU * Mt).sum(axis=0)
        dM = np.einsum("hk,rhk->kr", U, GV)
    else:
        dU = _scatter_rows(h, gs[:, None] * Mr * Vt, N)
        dV = _scatter_rows(t, gs[:, None] * Mr * Uh, N)
        dM = _scatter_rows(r, gs[:, None] * Uh * Vt, R).T
    grads = {"u_logit": dU * _sigmoid_grad(f.u_logit, U),
             "v_logit": dV * _sigmoid_grad(f.v_logit, V), "M": dM}
    return float(loss.mean()), grads


def margin_loss(f: IbgeFactors, kg: KnowledgeGraph, positive, negatives):
    """Loss of one positive against its negatives, with gradients for U, V (logits) and M."""
    w = kg_weights(kg, f.gamma)
    pos = np.asarray(positive, dtype=np.int64).reshape(1, 3)
    neg = np.asarray(negatives, dtype=np.int64).reshape(1, -1, 3)
    return _loss_and_grads(f, w, kg.linked, pos, neg)


def negative_sample(triples, n_entities: int, zeta: int, seed=None, kg: KnowledgeGraph | None = None,
                    max_rounds: int = 100) -> np.ndarray:
    """``zeta`` corruptions per triple (B x zeta x 3): head or tail by coin flip,
    replaced uniformly; known training positives are redrawn.  A corruption
    that stays positive after ``max_rounds`` redraws is kept (only possible
    when almost every candidate is a positive)."""
    if zeta < 1:
        raise ValueError("zeta must be >= 1")
    rng = np.random.default_rng(seed)
    base = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    out = np.repeat(base[:, None, :], zeta, axis=1)
    todo = np.ones(out.shape[:2], dtype=bool)
    for _ in range(max_rounds):
        idx = np.nonzero(todo)
        n = idx[0].size
        if n == 0:
            break
        col = np.where(rng.random(n) < 0.5, 0, 2)
        ent = rng.integers(0, n_entities, n)
        cand = base[idx[0]].copy()
        cand[np.arange(n), col] = ent
        out[idx] = cand
        bad = kg.is_train(cand) if kg is not None else np.zeros(n, bool)
        todo[idx] = bad
    return out


def _known_index(kg: KnowledgeGraph):
    """Maps (h, r) -> tails and (r, t) -> heads over all splits."""
    tails, heads = {}, {}
    for split in SPLITS:
        for h, r, t in getattr(kg, split):
            tails.setdefault((h, r), []).append(t)
            heads.setdefault((r, t), []).append(h)
    return ({k: np.array(v) for k, v in tails.items()}, {k: np.array(v) for k, v in heads.items()})


def candidate_distances(f: IbgeFactors, kg: KnowledgeGraph, w: KgWeights, h, r, t, side: str):
    """Distances of every entity substituted at ``side`` ('tail' or 'head') of ``(h, r, t)``."""
    U, V, m = f.U, f.V, f.M[:, r]
    ents = np.arange(kg.n_entities)
    if side == "tail":
        s = V @ (U[h] * m)
        q = w.q(kg.linked(np.full_like(ents, h), ents))
    else:
        s = U @ (m * V[t])
        q = w.q(kg.linked(ents, np.full_like(ents, t)))
    return q * (1.0 - s) ** 2 / w.Z


def evaluate_ranking(f: IbgeFactors, kg: KnowledgeGraph, triples=None, filtered: bool = True,
                     sides=("tail", "head")) -> dict:
    """MRR and Hits@{1,3,10} over head and tail queries.

    Lower distance ranks higher; an entity tied with the true one is placed
    ahead of it.  With ``filtered`` every other known positive is removed
    from the candidates.
    """
    triples = kg.test if triples is None else np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    w = kg_weights(kg, f.gamma)
    known_t, known_h = _known_index(kg) if filtered else ({}, {})
    ranks = []
    for h, r, t in triples:
        for side in sides:
            d = candidate_distances(f, kg, w, h, r, t, side)
            true = t if side == "tail" else h
            target = d[true]
            if filtered:
                other = known_t.get((h, r)) if side == "tail" else known_h.get((r, t))
                if other is not None:
                    d[other] = np.inf
                    d[true] = target
            # the true entity counts itself, ties count against it
            ranks.append(int(np.sum(d <= target)))
    ranks = np.array(ranks, dtype=np.float64)
    if ranks.size == 0:
        return {"mrr": float("nan"), "hits1": float("nan"), "hits3": float("nan"), "hits10": float("nan"), "n": 0}
    return {"mrr": float(np.mean(1.0 / ranks)), "hits1": float(np.mean(ranks <= 1)),
            "hits3": float(np.mean(ranks <= 3)), "hits10": float(np.mean(ranks <= 10)),
            "n": int(ranks.size)}


@dataclass
class IbgeConfig:
    k: int = 20
    gamma: float = 1.0
    margin: float = 0.5
    n_neg: int = 64
    epochs: int = 250
    lr: float = 0.05
    batch_size: int = 512
    seed: int = 0
    eval_every: int = 0

    def __post_init__(self):
        if self.k < 1 or self.n_neg < 1 or self.batch_size < 1:
            raise ValueError("k, n_neg and batch_size must be >= 1")
        if self.gamma <= 0 or self.margin <= 0 or self.lr <= 0 or self.epochs < 0:
            raise ValueError("gamma, margin and lr must be positive, epochs >= 0")


def init_ibge(n_entities: int, n_relations: int, cfg: IbgeConfig) -> IbgeFactors:
    rng = np.random.default_rng(cfg.seed)
    U = rng.uniform(0.05, 0.95, (n_entities, cfg.k))
    V = rng.uniform(0.05, 0.95, (n_entities, cfg.k))
    M = rng.normal(0.0, 1.0 / cfg.k, (cfg.k, n_relations))
    return IbgeFactors(logit(U), logit(V), M, cfg.gamma, cfg.margin, cfg.n_neg)


@dataclass
class IbgeResult:
    factors: IbgeFactors
    loss_trace: list
    valid_trace: list
    best_epoch: int
    seconds: float


def train_ibge(kg: KnowledgeGraph, cfg: IbgeConfig, init: IbgeFactors | None = None) -> IbgeResult:
    """Mini-batch Adam on the margin loss.  With ``eval_every`` the factors
    with the best validation MRR are returned, otherwise the final ones."""
    t0 = time.perf_counter()
    f = init.copy() if init is not None else init_ibge(kg.n_entities, kg.n_relations, cfg)
    w = kg_weights(kg, cfg.gamma)
    opt = Adam(f.params(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace, vtrace = [], []
    best = (-1.0, f.copy(), 0)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(kg.n_train)
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            pos = kg.train[order[start:start + cfg.batch_size]]
            neg = negative_sample(pos, kg.n_entities, cfg.n_neg, rng, kg)
            loss, g = _loss_and_grads(f, w, kg.linked, pos, neg)
            if not np.isfinite(loss):
                from .core import DivergenceError
                raise DivergenceError(f"IbgE loss became non-finite at epoch {epoch}")
            opt.step(g)
            total += loss * pos.shape[0]
        trace.append(total / kg.n_train)
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs) and kg.valid.size:
            mrr = evaluate_ranking(f, kg, kg.valid)["mrr"]
            vtrace.append((epoch, mrr))
            if mrr > best[0]:
                best = (mrr, f.copy(), epoch)
    if best[0] >= 0:
        return IbgeResult(best[1], trace, vtrace, best[2], time.perf_counter() - t0)
    return IbgeResult(f, trace, vtrace, cfg.epochs, time.perf_counter() - t0)


def save_ibge(path, f: IbgeFactors, kg: KnowledgeGraph | None = None) -> None:
    """Compressed ``.npz`` with the factors, hyperparameters and name tables."""
    extra = {}
    if kg is not None:
        extra = {"entities": np.array(kg.entities), "relations": np.array(kg.relations)}
    with open(path, "wb") as fh:
        np.savez_compressed(fh, format=np.array("IBGE v1"), u_logit=f.u_logit, v_logit=f.v_logit,
                            M=f.M, gamma=f.gamma, margin=f.margin, n_neg=f.n_neg, **extra)


def load_ibge(path) -> IbgeFactors:
    with np.load(path, allow_pickle=False) as z:
        if "format" not in z or str(z["format"]) != "IBGE v1":
            raise GraphFormatError(f"{path}: not an IBGE v1 factor file")
        return IbgeFactors(z["u_logit"], z["v_logit"], z["M"], float(z["gamma"]),
                           float(z["margin"]), int(z["n_neg"]))
