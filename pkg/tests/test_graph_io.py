import numpy as np
import pytest
from numpy.testing import assert_array_equal, assert_allclose

from ibg.core import random_factors
from ibg.graph_io import (DirectedGraphSignal, GraphFormatError, SbmSpec, generate_sbm, load_edge_list,
                          load_ibg, load_labels, load_masks, load_signal, normalize_columns, random_split,
                          relabel_dense, save_graph, save_ibg)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_edge_list_with_comments(tmp_path):
    p = write(tmp_path, "e.txt", "# header\n0 1\n\n1 2  # trailing\n2 0\n0 1\n")
    g = load_edge_list(p)
    assert g.n_nodes == 3
    assert g.n_edges == 3  # duplicate dropped
    assert_array_equal(g.edges, [[0, 1], [1, 2], [2, 0]])


@pytest.mark.parametrize("text, msg", [
    ("0 1\n1\n", ":2:"),
    ("0 x\n", "non-integer"),
    ("0 -1\n", "negative"),
    ("0 1 2\n", ":1:"),
])
def test_load_edge_list_errors(tmp_path, text, msg):
    with pytest.raises(GraphFormatError, match=msg):
        load_edge_list(write(tmp_path, "e.txt", text))


def test_node_count_override_and_header(tmp_path):
    p = write(tmp_path, "e.txt", "0 1\n")
    assert load_edge_list(p, n_nodes=5).n_nodes == 5
    with pytest.raises(GraphFormatError):
        load_edge_list(write(tmp_path, "f.txt", "0 7\n"), n_nodes=3)
    assert load_edge_list(write(tmp_path, "h.txt", "# N=9 E=1\n0 1\n")).n_nodes == 9


def test_has_edges_and_csr():
    g = DirectedGraphSignal(4, [[2, 3], [0, 1], [1, 0], [3, 3]])
    assert_array_equal(g.has_edges([0, 1, 0, 3], [1, 0, 0, 3]), [True, True, False, True])
    A = g.dense_adjacency()
    assert A.sum() == 4 and A[2, 3] == 1 and A[3, 2] == 0
    assert_array_equal(g.adjacency().toarray(), A)
    vals = np.arange(1.0, 5.0)
    M = g.edge_matrix(vals).toarray()
    assert_allclose(M[g.src, g.dst], vals)


def test_invalid_edges_rejected():
    with pytest.raises(GraphFormatError):
        DirectedGraphSignal(3, [[0, 3]])
    with pytest.raises(GraphFormatError):
        DirectedGraphSignal(3, [[0, 1]], X=np.zeros((2, 1)))


def test_dense_adjacency_guard():
    g = DirectedGraphSignal(10, [[0, 1]])
    with pytest.raises(MemoryError):
        g.dense_adjacency(max_nodes=5)


def test_masks_must_be_disjoint():
    m = np.array([True, False, True])
    with pytest.raises(GraphFormatError):
        DirectedGraphSignal(3, [[0, 1]], masks={"train": m, "test": m})


def test_normalize_columns():
    X = np.array([[0.0, 5.0, 1.0], [10.0, 5.0, 3.0], [5.0, 5.0, 2.0]])
    Y = normalize_columns(X)
    assert_allclose(Y[:, 0], [-1, 1, 0])
    assert_allclose(Y[:, 1], 0)
    assert Y.min() >= -1 and Y.max() <= 1


def test_signal_labels_masks_round_trip(tmp_path):
    spec = SbmSpec.planted([5, 7], 0.5, 0.1, means=[[0.5, 0.0], [-0.5, 0.2]], seed=3)
    g = generate_sbm(spec)
    g = DirectedGraphSignal(g.n_nodes, g.edges, g.X, g.labels, random_split(g.n_nodes, seed=1))
    save_graph(tmp_path, g)
    h = load_edge_list(tmp_path / "edges.txt")
    assert_array_equal(h.edges, g.edges)
    assert h.n_nodes == g.n_nodes
    X = load_signal(tmp_path / "signal.txt", g.n_nodes)
    assert_allclose(X, normalize_columns(g.X))
    assert_array_equal(load_labels(tmp_path / "labels.txt", g.n_nodes), g.labels)
    masks = load_masks(tmp_path / "masks.txt", g.n_nodes)
    for k in ("train", "val", "test"):
        assert_array_equal(masks[k], g.masks[k])


def test_bad_signal_rows(tmp_path):
    with pytest.raises(GraphFormatError):
        load_signal(write(tmp_path, "x.txt", "1 2\n3 4\n"), 3)
    with pytest.raises(GraphFormatError):
        load_masks(write(tmp_path, "m.txt", "train\nbogus\n"), 2)


def test_relabel_dense():
    edges, ids = relabel_dense([[10, 30], [30, 7]])
    assert_array_equal(ids, [7, 10, 30])
    assert_array_equal(edges, [[1, 2], [2, 0]])


def test_sbm_is_seeded_and_planted():
    spec = SbmSpec.planted([100, 100], 0.3, 0.02, seed=5)
    a, b = generate_sbm(spec), generate_sbm(spec)
    assert_array_equal(a.edges, b.edges)
    A = a.dense_adjacency()
    within = A[:100, :100].sum() / (100 * 99)
    across = A[:100, 100:].mean()
    assert abs(within - 0.3) < 0.03 and abs(across - 0.02) < 0.01
    assert np.trace(A) == 0


def test_random_split_partitions():
    m = random_split(50, (0.6, 0.2, 0.2), seed=0)
    total = m["train"].astype(int) + m["val"] + m["test"]
    assert_array_equal(total, 1)
    assert m["train"].sum() == 30


@pytest.mark.parametrize("d", [0, 3])
def test_ibg_file_round_trip(tmp_path, d):
    f = random_factors(6, 4, d, seed=2)
    f.F[:] = np.random.default_rng(0).normal(size=f.F.shape)
    save_ibg(tmp_path / "f.ibg", f, gamma=0.7, alpha=0.25, beta=0.75)
    g, meta = load_ibg(tmp_path / "f.ibg", with_meta=True)
    for name in ("u_logit", "v_logit", "r", "F", "B"):
        assert_array_equal(getattr(g, name), getattr(f, name))
    assert meta == {"gamma": 0.7, "alpha": 0.25, "beta": 0.75}


def test_ibg_file_errors(tmp_path):
    f = random_factors(3, 2, 1, seed=0)
    p = tmp_path / "f.ibg"
    save_ibg(p, f)
    text = p.read_text()
    write(tmp_path, "v2.ibg", text.replace("IBG v1", "IBG v2", 1))
    with pytest.raises(GraphFormatError, match="version"):
        load_ibg(tmp_path / "v2.ibg")
    write(tmp_path, "bad.ibg", text.replace("N 3", "N 2", 1))
    with pytest.raises(GraphFormatError):
        load_ibg(tmp_path / "bad.ibg")
    write(tmp_path, "junk.ibg", "hello\n")
    with pytest.raises(GraphFormatError):
        load_ibg(tmp_path / "junk.ibg")
