import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_graph
from ibg.core import FitConfig, fit_full, grads, loss_efficient, random_factors
from ibg.graph_io import SbmSpec, generate_sbm
from ibg.optim import Adam
from ibg.subgraph_sgd import fit_sgd, sample_nodes, subgraph_loss_and_grads


def features(n, k, d, seed):
    f = random_factors(n, k, d, seed=seed)
    rng = np.random.default_rng(seed)
    f.r[:] = rng.normal(0, 1, k)
    f.F[:] = rng.normal(0, 0.3, (k, d))
    f.B[:] = rng.normal(0, 0.3, (k, d))
    return f


def test_sampling_contract():
    a, b = sample_nodes(100, 10, seed=3, step=5), sample_nodes(100, 10, seed=3, step=5)
    assert_array_equal(a.nodes, b.nodes)
    assert a.size == 10 and a.nodes.min() >= 0 and a.nodes.max() < 100
    assert not np.array_equal(a.nodes, sample_nodes(100, 10, seed=3, step=6).nodes)
    one = sample_nodes(7, 1, seed=0)
    assert one.size == 1 and 0 <= one.nodes[0] < 7
    assert_array_equal(sample_nodes(6, 6, identity=True).nodes, np.arange(6))
    for bad in (0, 101):
        with pytest.raises(ValueError):
            sample_nodes(100, bad)
    with pytest.raises(ValueError):
        sample_nodes(10, 5, identity=True)


@pytest.mark.parametrize("seed", range(4))
def test_identity_sample_is_the_full_loss(seed):
    g = random_graph(15, 0.25, 2, seed)
    f = features(15, 3, 2, seed)
    cfg = FitConfig(k=3, gamma=[0.5, 1.0, 2.0, 4.0][seed])
    loss, sg = subgraph_loss_and_grads(g, f, cfg, sample_nodes(15, 15, identity=True))
    assert_allclose(loss, loss_efficient(g, f, cfg), rtol=1e-10)
    full = grads(g, f, cfg)
    assert_array_equal(sg.rows, np.arange(15))
    for name in ("r", "F", "B"):
        assert_allclose(getattr(sg, name), getattr(full, name), rtol=1e-9, atol=1e-14)
    assert_allclose(sg.u_rows, full.u_logit, rtol=1e-9, atol=1e-14)
    assert_allclose(sg.v_rows, full.v_logit, rtol=1e-9, atol=1e-14)


def test_empty_model_full_sample(small_graph):
    f = random_factors(12, 2, 3, seed=0)
    f.r[:] = 0
    cfg = FitConfig(k=2)
    loss, _ = subgraph_loss_and_grads(small_graph, f, cfg, sample_nodes(12, 12, identity=True))
    assert_allclose(loss, 0.5 + 0.5 * np.mean(small_graph.X ** 2), rtol=1e-12)


def test_duplicates_accumulate():
    g = random_graph(8, 0.4, 1, 2)
    f = features(8, 2, 1, 2)
    cfg = FitConfig(k=2)
    s = sample_nodes(8, 4, seed=0)
    s.nodes = np.array([3, 3, 5, 1])
    _, sg = subgraph_loss_and_grads(g, f, cfg, s)
    assert_array_equal(sg.rows, [1, 3, 5])


def test_sub_loss_never_densifies_the_graph(small_graph, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("dense adjacency requested")
    monkeypatch.setattr(type(small_graph), "dense_adjacency", boom)
    monkeypatch.setattr(type(small_graph), "adjacency", boom)
    f = features(12, 2, 3, 0)
    subgraph_loss_and_grads(small_graph, f, FitConfig(k=2), sample_nodes(12, 5, seed=1))


def test_gradient_in_r_is_nearly_unbiased():
    g = random_graph(120, 0.08, 0, 4)
    f = features(120, 3, 0, 4)
    cfg = FitConfig(k=3, alpha=1.0, beta=0.0)
    full = grads(g, f, cfg).r
    est = np.mean([subgraph_loss_and_grads(g, f, cfg, sample_nodes(120, 40, seed=1, step=s))[1].r
                   for s in range(600)], axis=0)
    assert np.max(np.abs(est - full) / np.abs(full)) < 0.08


def test_unsampled_rows_are_untouched(small_graph):
    f = features(12, 2, 3, 1)
    before = f.copy()
    res = fit_sgd(small_graph, FitConfig(k=2, lr=0.05), 3, 1, init=f)
    touched = np.unique(sample_nodes(12, 3, seed=0, step=0).nodes)
    rest = np.setdiff1d(np.arange(12), touched)
    assert_array_equal(res.factors.u_logit[rest], before.u_logit[rest])
    assert_array_equal(res.factors.v_logit[rest], before.v_logit[rest])
    assert not np.array_equal(res.factors.u_logit[touched], before.u_logit[touched])


def test_identity_sgd_tracks_full_gradient_descent(small_graph):
    init = features(12, 3, 3, 2)
    cfg = FitConfig(k=3, lr=0.01, epochs=15)
    full = fit_full(small_graph, cfg, init=init)
    assert full.best_epoch == 15
    sgd = fit_sgd(small_graph, cfg, 12, 15, init=init, identity=True)
    for name in ("u_logit", "v_logit", "r", "F", "B"):
        assert_allclose(getattr(sgd.factors, name), getattr(full.factors, name), atol=1e-10)


def test_zero_steps_keep_init(small_graph):
    init = features(12, 2, 3, 0)
    res = fit_sgd(small_graph, FitConfig(k=2), 4, 0, init=init)
    assert_array_equal(res.factors.u_logit, init.u_logit)
    assert len(res.loss_trace) == 1


def test_sgd_reduces_loss_and_is_seeded():
    g = generate_sbm(SbmSpec.planted([60, 60], 0.2, 0.02, seed=0))
    cfg = FitConfig(k=4, alpha=1.0, beta=0.0, lr=0.05, init="random")
    a = fit_sgd(g, cfg, 30, 200, eval_every=50)
    b = fit_sgd(g, cfg, 30, 200)
    assert a.loss < a.initial_loss
    assert len(a.loss_trace) == 5
    assert_array_equal(a.factors.r, b.factors.r)


def test_lazy_adam_matches_dense_on_full_rows():
    rng = np.random.default_rng(0)
    p1 = {"w": rng.normal(size=(5, 3))}
    p2 = {"w": p1["w"].copy()}
    o1, o2 = Adam(p1, lr=0.1), Adam(p2, lr=0.1)
    for _ in range(4):
        g = rng.normal(size=(5, 3))
        o1.step({"w": g})
        o2.tick()
        o2.update_rows("w", np.arange(5), g)
    assert_allclose(p1["w"], p2["w"], rtol=1e-14)
