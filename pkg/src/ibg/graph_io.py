"""Graph-signal containers, text loaders, the SBM generator and IBG factor files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

MASK_NAMES = ("train", "val", "test")


class GraphFormatError(ValueError):
    """Raised for malformed or inconsistent input files."""


@dataclass(frozen=True)
class DirectedGraphSignal:
    """A directed graph stored as a sorted edge list plus a node signal.

    ``edges`` is an ``(E, 2)`` int64 array of ``(src, dst)`` pairs sorted
    lexicographically with duplicates removed, so ``a[src, dst] = 1``.
    """

    n_nodes: int
    edges: np.ndarray
    X: np.ndarray | None = None
    labels: np.ndarray | None = None
    masks: dict[str, np.ndarray] | None = None
    _keys: np.ndarray = field(init=False, repr=False, compare=False)
    _cache: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = int(self.n_nodes)
        if n < 1:
            raise GraphFormatError(f"graph needs at least one node, got N={n}")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise GraphFormatError(f"edge endpoints must lie in [0, {n})")
        keys = np.unique(edges[:, 0] * n + edges[:, 1])
        edges = np.column_stack([keys // n, keys % n])
        object.__setattr__(self, "n_nodes", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_keys", keys)

        if self.X is None:
            X = np.zeros((n, 0))
        else:
            X = np.asarray(self.X, dtype=np.float64)
            if X.ndim == 1:
                X = X[:, None]
        if X.shape[0] != n:
            raise GraphFormatError(f"signal has {X.shape[0]} rows, expected {n}")
        object.__setattr__(self, "X", X)

        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if labels.shape[0] != n:
                raise GraphFormatError(f"{labels.shape[0]} labels for {n} nodes")
            object.__setattr__(self, "labels", labels)
        if self.masks is not None:
            masks = {k: np.asarray(v, dtype=bool).ravel() for k, v in self.masks.items()}
            for name, m in masks.items():
                if m.shape[0] != n:
                    raise GraphFormatError(f"mask {name!r} has length {m.shape[0]}, expected {n}")
            stacked = np.stack(list(masks.values())) if masks else np.zeros((0, n), bool)
            if (stacked.sum(axis=0) > 1).any():
                raise GraphFormatError("train/val/test masks overlap")
            object.__setattr__(self, "masks", masks)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    def has_edges(self, src, dst) -> np.ndarray:
        """Vectorised membership test ``a[src, dst] == 1`` via binary search."""
        q = np.asarray(src, dtype=np.int64) * self.n_nodes + np.asarray(dst, dtype=np.int64)
        if self._keys.size == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.searchsorted(self._keys, q)
        pos = np.minimum(pos, self._keys.size - 1)
        return self._keys[pos] == q

    @property
    def indptr(self) -> np.ndarray:
        """CSR row pointer of the adjacency; edge order already matches CSR order."""
        if "indptr" not in self._cache:
            counts = np.bincount(self.src, minlength=self.n_nodes)
            self._cache["indptr"] = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return self._cache["indptr"]

    def edge_matrix(self, values) -> sparse.csr_matrix:
        """Sparse N x N matrix carrying ``values[e]`` at edge ``e``."""
        n = self.n_nodes
        return sparse.csr_matrix((values, self.dst, self.indptr), shape=(n, n))

    def adjacency(self) -> sparse.csr_matrix:
        return self.edge_matrix(np.ones(self.n_edges))

    def dense_adjacency(self, max_nodes: int = 5000) -> np.ndarray:
        if self.n_nodes > max_nodes:
            raise MemoryError(f"refusing to densify a {self.n_nodes}-node adjacency")
        A = np.zeros((self.n_nodes, self.n_nodes))
        A[self.src, self.dst] = 1.0
        return A

    def with_signal(self, X) -> "DirectedGraphSignal":
        return DirectedGraphSignal(self.n_nodes, self.edges, X, self.labels, self.masks)


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def load_edge_list(path, n_nodes: int | None = None) -> DirectedGraphSignal:
    """Read a whitespace separated ``src dst`` file; ``#`` starts a comment.

    A ``# N=<count>`` header (as written by :func:`save_graph`) fixes the node
    count when ``n_nodes`` is not given, so isolated nodes survive a round trip.
    """
    pairs = []
    header_n = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if header_n is None and raw.startswith("# N="):
                header_n = int(raw[4:].split()[0])
            line = _strip(raw)
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'src dst', got {raw.strip()!r}")
            try:
                s, d = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {raw.strip()!r}") from None
            if s < 0 or d < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node id")
            pairs.append((s, d))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    inferred = int(edges.max()) + 1 if edges.size else 0
    if n_nodes is None:
        n_nodes = max(inferred, header_n or 0)
    elif n_nodes < inferred:
        raise GraphFormatError(f"{path}: node id {inferred - 1} out of range for N={n_nodes}")
    if n_nodes == 0:
        raise GraphFormatError(f"{path}: empty edge list and no node count given")
    return DirectedGraphSignal(n_nodes, edges)


def relabel_dense(edges) -> tuple[np.ndarray, np.ndarray]:
    """Map arbitrary node ids onto ``0..N-1``; returns (edges, original ids)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    ids, inv = np.unique(edges, return_inverse=True)
    return inv.reshape(-1, 2), ids


def save_id_map(path, ids) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for new, old in enumerate(ids):
            fh.write(f"{new} {old}\n")


def normalize_columns(X) -> np.ndarray:
    """Affine min-max rescale of each column onto [-1, 1]; constant columns become 0."""
    X = np.asarray(X, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    out = np.zeros_like(X)
    ok = span > 0
    out[:, ok] = 2.0 * (X[:, ok] - lo[ok]) / span[ok] - 1.0
    return out


def load_signal(path, n_nodes: int) -> np.ndarray:
    try:
        X = np.loadtxt(path, ndmin=2, comments="#")
    except ValueError as exc:
        raise GraphFormatError(f"{path}: {exc}") from None
    if X.shape[0] != n_nodes:
        raise GraphFormatError(f"{path}: {X.shape[0]} rows, expected {n_nodes}")
    if not np.isfinite(X).all():
        raise GraphFormatError(f"{path}: non-finite feature value")
    return normalize_columns(X)


def load_labels(path, n_nodes: int) -> np.ndarray:
    labels = np.loadtxt(path, dtype=np.int64, ndmin=1, comments="#")
    if labels.shape[0] != n_nodes:
        raise GraphFormatError(f"{path}: {labels.shape[0]} labels, expected {n_nodes}")
    return labels


def load_masks(path, n_nodes: int) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        tags = [_strip(l) for l in fh]
    tags = [t for t in tags if t]
    if len(tags) != n_nodes:
        raise GraphFormatError(f"{path}: {len(tags)} mask entries, expected {n_nodes}")
    bad = set(tags) - {*MASK_NAMES, "none"}
    if bad:
        raise GraphFormatError(f"{path}: unknown mask tags {sorted(bad)}")
    tags = np.array(tags)
    return {name: tags == name for name in MASK_NAMES}


def save_graph(directory, graph: DirectedGraphSignal) -> None:
    """Write edges.txt / signal.txt / labels.txt / masks.txt into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.txt", "w", encoding="utf-8") as fh:
        fh.write(f"# N={graph.n_nodes} E={graph.n_edges}\n")
        for s, t in graph.edges:
            fh.write(f"{s} {t}\n")
    if graph.n_features:
        np.savetxt(d / "signal.txt", graph.X, fmt="%.17g")
    if graph.labels is not None:
        np.savetxt(d / "labels.txt", graph.labels, fmt="%d")
    if graph.masks is not None:
        tags = np.full(graph.n_nodes, "none", dtype=object)
        for name in MASK_NAMES:
            if name in graph.masks:
                tags[graph.masks[name]] = name
        (d / "masks.txt").write_text("".join(f"{t}\n" for t in tags), encoding="utf-8")


@dataclass
class SbmSpec:
    sizes: tuple[int, ...]
    probs: np.ndarray
    means: np.ndarray | None = None
    noise: float = 0.1
    seed: int = 0
    self_loops: bool = False

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        nb = len(self.sizes)
        if self.probs.shape != (nb, nb):
            raise ValueError(f"probs must be {nb}x{nb}, got {self.probs.shape}")
        if (self.probs < 0).any() or (self.probs > 1).any():
            raise ValueError("edge probabilities must lie in [0, 1]")
        if any(s < 1 for s in self.sizes):
            raise ValueError("block sizes must be positive")
        if self.means is not None:
            self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
            if self.means.shape[0] != nb:
                raise ValueError("need one feature mean row per block")

    @classmethod
    def planted(cls, sizes, p_in, p_out, **kw) -> "SbmSpec":
        nb = len(sizes)
        probs = np.full((nb, nb), float(p_out))
        np.fill_diagonal(probs, float(p_in))
        return cls(sizes=tuple(sizes), probs=probs, **kw)

    @property
    def n_nodes(self) -> int:
        return sum(self.sizes)


def generate_sbm(spec: SbmSpec) -> DirectedGraphSignal:
    """Sample a directed SBM; features are block means plus Gaussian noise clipped to [-1, 1]."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_nodes
    block = np.repeat(np.arange(len(spec.sizes)), spec.sizes)
    keys = []
    # row-by-row sampling keeps memory at O(N) per row instead of O(N^2)
    for i in range(n):
        p = spec.probs[block[i], block]
        hit = rng.random(n) < p
        if not spec.self_loops:
            hit[i] = False
        keys.append(i * n + np.flatnonzero(hit))
    keys = np.concatenate(keys) if keys else np.zeros(0, np.int64)
    edges = np.column_stack([keys // n, keys % n])
    X = None
    if spec.means is not None:
        X = spec.means[block] + spec.noise * rng.standard_normal((n, spec.means.shape[1]))
        X = np.clip(X, -1.0, 1.0)
    return DirectedGraphSignal(n, edges, X, labels=block)


def random_split(n_nodes: int, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_nodes)
    cuts = np.cumsum([int(round(f * n_nodes)) for f in fractions])
    cuts[-1] = min(cuts[-1], n_nodes)
    masks, start = {}, 0
    for name, stop in zip(MASK_NAMES, cuts):
        m = np.zeros(n_nodes, dtype=bool)
        m[perm[start:stop]] = True
        masks[name] = m
        start = stop
    return masks


# --- IBG factor files -------------------------------------------------------

IBG_MAGIC = "IBG"
IBG_VERSION = "v1"


def _fmt_row(values) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def save_ibg(path, factors, gamma: float = 1.0, alpha: float = 0.5, beta: float = 0.5) -> None:
    """Write factors in the ``IBG v1`` text format (17 significant digits)."""
    for name in ("u_logit", "v_logit", "r", "F", "B"):
        if not np.isfinite(getattr(factors, name)).all():
            raise ValueError(f"refusing to save non-finite {name}")
    N, K, D = factors.n_nodes, factors.rank, factors.n_features
    lines = [
        f"{IBG_MAGIC} {IBG_VERSION}",
        f"N {N} K {K} D {D}",
        f"gamma {gamma:.17g} alpha {alpha:.17g} beta {beta:.17g}",
        "U'",
        *(_fmt_row(row) for row in factors.u_logit),
        "V'",
        *(_fmt_row(row) for row in factors.v_logit),
        "r",
        _fmt_row(factors.r),
        "F",
        *(_fmt_row(row) for row in factors.F),
        "B",
        *(_fmt_row(row) for row in factors.B),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_block(lines, pos, name, rows, cols, path):
    if pos >= len(lines) or lines[pos].strip() != name:
        raise GraphFormatError(f"{path}: expected block header {name!r} at line {pos + 1}")
    pos += 1
    out = np.zeros((rows, cols))
    for r in range(rows):
        if pos >= len(lines):
            raise GraphFormatError(f"{path}: block {name!r} truncated after {r} rows")
        vals = lines[pos].split()
        if len(vals) != cols:
            raise GraphFormatError(
                f"{path}:{pos + 1}: block {name!r} row has {len(vals)} values, expected {cols}"
            )
        out[r] = [float(v) for v in vals]
        pos += 1
    return out, pos


def load_ibg(path, with_meta: bool = False):
    """Read an ``IBG v1`` file; ``with_meta`` also returns the gamma/alpha/beta header."""
    from .core import IbgFactors

    lines = Path(path).read_text(encoding="utf-8").split("\n")
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != IBG_MAGIC:
        raise GraphFormatError(f"{path}: not an IBG factor file")
    if head[1] != IBG_VERSION:
        raise GraphFormatError(f"{path}: unsupported IBG format version {head[1]!r}")
    try:
        _, N, _, K, _, D = lines[1].split()
        N, K, D = int(N), int(K), int(D)
        _, g, _, a, _, b = lines[2].split()
        meta = {"gamma": float(g), "alpha": float(a), "beta": float(b)}
    except (ValueError, IndexError):
        raise GraphFormatError(f"{path}: malformed header") from None
    pos = 3
    u, pos = _read_block(lines, pos, "U'", N, K, path)
    v, pos = _read_block(lines, pos, "V'", N, K, path)
    r, pos = _read_block(lines, pos, "r", 1, K, path)
    F, pos = _read_block(lines, pos, "F", K, D, path)
    B, pos = _read_block(lines, pos, "B", K, D, path)
    if any(l.strip() for l in lines[pos:]):
        raise GraphFormatError(f"{path}: trailing data after block 'B' (dimension mismatch?)")
    factors = IbgFactors(u, v, r[0], F, B)
    return (factors, meta) if with_meta else factors
