
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ibg.core import random_factors
from ibg.graph_io import DirectedGraphSignal, SbmSpec, generate_sbm, random_split
from ibg.ibgnn import (IbgnnConfig, accuracy, analysis, backward, forward, init_model, softmax_xent,
                       synthesis, train_node_classifier)


def test_analysis_oracles():
    rng = np.random.default_rng(0)
    W = rng.random((50, 4))
    X = rng.normal(size=(50, 3))
    oracle = np.linalg.inv(W.T @ W) @ W.T @ X
    assert_allclose(analysis(X, W), oracle, atol=1e-8)
    G = rng.normal(size=(4, 3))
    assert_allclose(analysis(synthesis(G, W), W), G, atol=1e-8)
    Q, _ = np.linalg.qr(rng.normal(size=(20, 3)))
    assert_allclose(analysis(X[:20], Q), Q.T @ X[:20], atol=1e-8)


def test_synthesis_examples():
    G = np.arange(6.0).reshape(2, 3)
    assert not synthesis(np.zeros((2, 3)), np.ones((5, 2))).any()
    assert_allclose(synthesis(G[:1], np.ones((4, 1))), np.tile(G[:1], (4, 1)))


def test_analysis_warns_on_rank_deficiency():
    W = np.ones((10, 2))
    with pytest.warns(RuntimeWarning):
        analysis(np.ones((10, 1)), W)


def model_and_data(seed=0, jk="none", deepsets=False, residual=False, layers=2, hidden=4, n=10, d=3, k=3, c=3):
    rng = np.random.default_rng(seed)
    f = random_factors(n, k, 0, seed=seed)
    X = rng.uniform(-1, 1, (n, d))
    y = rng.integers(0, c, n)
    cfg = IbgnnConfig(layers=layers, hidden=hidden, jk=jk, deepsets=deepsets, residual=residual, seed=seed)
    m = init_model(d, c, k, cfg)
    for key in m.params:
        m.params[key] += rng.normal(0, 0.1, m.params[key].shape)
    return m, X, y, f


def test_zero_parameters_give_uniform_probabilities():
    m, X, y, f = model_and_data()
    for p in m.params.values():
        p[...] = 0
    logits, _ = forward(m, X, f)
    assert not logits.any()


def test_identity_layer_doubles_the_input():
    n, d = 6, 3
    f = random_factors(n, 2, 0, seed=0)
    X = np.random.default_rng(0).uniform(0, 1, (n, d))
    m = init_model(d, 2, 2, IbgnnConfig(layers=1, hidden=d))
    for b in "st":
        m.params[f"{b}0.W1"][...] = np.eye(d)
        m.params[f"{b}0.b"][...] = 0
        m.params[f"{b}0.T1"][...] = 0
    m.params["out.W"][...] = np.eye(d)[:, :2]
    m.params["out.b"][...] = 0
    _, cache = forward(m, X, f)
    assert_allclose(cache["R"], 2 * X)


def test_deepsets_with_zero_mean_weights_is_linear():
    m, X, y, f = model_and_data(deepsets=True)
    lin, _, _, _ = model_and_data(deepsets=False)
    for key in m.params:
        if key.endswith(".W2") or key.endswith(".T2"):
            m.params[key][...] = 0
        elif key in lin.params:
            lin.params[key][...] = m.params[key]
    assert_allclose(forward(m, X, f)[0], forward(lin, X, f)[0], rtol=1e-13)


CONFIGS = [dict(jk=j, deepsets=ds, residual=r, layers=l, seed=s)
           for s, (j, ds, r, l) in enumerate([(j, ds, r, l) for j in ("none", "max", "cat")
                                              for ds in (False, True) for r in (False, True)
                                              for l in (1, 2)])]


def numeric_grad(m, X, y, f, key, idx, h=1e-5):
    mask = np.ones(len(y), bool)
    p = m.params[key]
    old = p[idx]
    p[idx] = old + h
    lp = softmax_xent(forward(m, X, f)[0], y, mask)[0]
    p[idx] = old - h
    lm = softmax_xent(forward(m, X, f)[0], y, mask)[0]
    p[idx] = old
    return (lp - lm) / (2 * h)


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: "-".join(str(v) for v in c.values()))
def test_backward_matches_finite_differences(cfg):
    m, X, y, f = model_and_data(residual=cfg["residual"], jk=cfg["jk"], deepsets=cfg["deepsets"],
                                layers=cfg["layers"], seed=cfg["seed"], hidden=3)
    logits, cache = forward(m, X, f)
    _, d = softmax_xent(logits, y, np.ones(len(y), bool))
    g = backward(m, cache, d)
    rng = np.random.default_rng(cfg["seed"])
    for key, p in m.params.items():
        for flat in rng.choice(p.size, min(p.size, 3), replace=False):
            idx = np.unravel_index(flat, p.shape)
            num = numeric_grad(m, X, y, f, key, idx)
            assert abs(num - g[key][idx]) <= 1e-4 * max(abs(num), abs(g[key][idx]), 1e-3), key


def test_zero_upstream_gradient():
    m, X, y, f = model_and_data(deepsets=True, jk="cat")
    logits, cache = forward(m, X, f)
    g = backward(m, cache, np.zeros_like(logits))
    assert all(not v.any() for v in g.values())


def test_dead_unit_passes_no_gradient():
    m, X, y, f = model_and_data(layers=1)
    m.params["s0.b"][0] = -1e3
    logits, cache = forward(m, X, f)
    g = backward(m, cache, np.ones_like(logits))
    assert not g["s0.W1"][:, 0].any() and g["s0.b"][0] == 0


def test_community_permutation_equivariance():
    m, X, y, f = model_and_data(k=4, deepsets=True)
    perm = np.array([2, 0, 3, 1])
    before = forward(m, X, f)[0]
    fp = f.permute(perm)
    for key in list(m.params):
        if key[0] in "BF" and key[1:].isdigit():
            m.params[key] = m.params[key][perm]
    assert_allclose(forward(m, X, fp)[0], before, atol=1e-12)


def sbm_task(seed=0):
    g = generate_sbm(SbmSpec.planted([40, 40], 0.3, 0.03, means=[[0.4], [-0.4]], noise=0.3, seed=seed))
    return DirectedGraphSignal(g.n_nodes, g.edges, g.X, g.labels, random_split(g.n_nodes, seed=seed))


def test_training_learns_a_planted_split():
    g = sbm_task()
    f = random_factors(g.n_nodes, 4, 1, seed=0)
    res = train_node_classifier(g, f, IbgnnConfig(epochs=60, hidden=16, lr=0.02))
    assert res.metrics["train_acc"] >= 0.9 and res.metrics["test_acc"] >= 0.8
    assert len(res.loss_trace) == 60 and res.loss_trace[-1] < res.loss_trace[0]


def test_constant_labels_and_zero_epochs():
    g = sbm_task(1)
    f = random_factors(g.n_nodes, 3, 1, seed=1)
    const = DirectedGraphSignal(g.n_nodes, g.edges, g.X, np.zeros(g.n_nodes, int), g.masks)
    res = train_node_classifier(const, f, IbgnnConfig(epochs=0))
    assert res.metrics["test_acc"] == 1.0 and res.best_epoch == 0
    rng = np.random.default_rng(0)
    accs = []
    for s in range(10):
        noisy = DirectedGraphSignal(g.n_nodes, g.edges, g.X, rng.integers(0, 2, g.n_nodes), g.masks)
        accs.append(train_node_classifier(noisy, f, IbgnnConfig(epochs=0, seed=s)).metrics["test_acc"])
    assert abs(np.mean(accs) - 0.5) < 0.15


def test_dropout_training_is_seeded():
    g = sbm_task(2)
    f = random_factors(g.n_nodes, 3, 1, seed=2)
    cfg = IbgnnConfig(epochs=10, dropout=0.3, seed=4)
    a, b = train_node_classifier(g, f, cfg), train_node_classifier(g, f, cfg)
    assert a.loss_trace == b.loss_trace


def test_training_input_checks():
    g = sbm_task()
    f = random_factors(g.n_nodes, 3, 1, seed=0)
    with pytest.raises(ValueError, match="labels"):
        train_node_classifier(DirectedGraphSignal(g.n_nodes, g.edges, g.X), f, IbgnnConfig())
    big = DirectedGraphSignal(g.n_nodes, g.edges, 3 * g.X, g.labels, g.masks)
    with pytest.raises(ValueError, match="\\[-1, 1\\]"):
        train_node_classifier(big, f, IbgnnConfig())
    with pytest.raises(ValueError):
        IbgnnConfig(jk="sum")


def test_accuracy_and_xent_helpers():
    logits = np.array([[2.0, 0.0], [0.0, 1.0], [3.0, 0.0]])
    y = np.array([0, 1, 1])
    mask = np.array([True, True, False])
    assert accuracy(logits, y, mask) == 1.0
    loss, d = softmax_xent(logits, y, mask)
    assert_array_equal(d[2], 0)
    assert_allclose(d[:2].sum(axis=1), 0, atol=1e-15)
