"""``ibg`` command line: fit, certify and use Intersecting Block Graphs.

Exit codes: 0 success, 1 certificate not accepted, 2 invalid input, 3 divergence.
Reports go to stdout as ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext

import numpy as np

from . import certify as cert_mod
from .core import DivergenceError, FitConfig, fit_full, init_factors, loss_efficient, synthesize
from .graph_io import (DirectedGraphSignal, GraphFormatError, SbmSpec, generate_sbm, load_edge_list,
                       load_ibg, load_labels, load_masks, load_signal, random_split, save_graph, save_ibg)
from .ibgnn import IbgnnConfig, predict, train_node_classifier
from .kg import IbgeConfig, evaluate_ranking, load_ibge, load_triples_dir, save_ibge, train_ibge, \
    write_dictionaries
from .norms import DegenerateGraphError, densifying_cut_similarity
from .subgraph_sgd import fit_sgd

EXIT_OK, EXIT_REJECTED, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3
HELP_WIDTH = 88


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def __init__(self, prog):
        super().__init__(prog, width=HELP_WIDTH, max_help_position=32)

    def _get_help_string(self, action):
        if action.default is None or "(default" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def _emit(pairs, out=None):
    text = "".join(f"{k}={v}\n" for k, v in pairs)
    sys.stdout.write(text)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _f(x) -> str:
    return f"{x:.10g}"


def _threads(n):
    """Cap BLAS threads when threadpoolctl is available; otherwise a no-op."""
    if not n:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return nullcontext()
    return threadpool_limits(limits=n)


# --- argument groups --------------------------------------------------------

def _graph_args(p, signal=True):
    p.add_argument("--edges", required=True, help="edge list, one 'src dst' pair per line")
    if signal:
        p.add_argument("--signal", help="node features, one whitespace-separated row per node")
    p.add_argument("--n-nodes", type=int, help="node count (default: from header or max id + 1)")


def _fit_args(p, epochs=1000):
    p.add_argument("--k", type=int, default=8, help="number of communities")
    p.add_argument("--gamma", type=float, default=1.0, help="densification factor")
    p.add_argument("--alpha", type=float, help="graph weight (default 1 - beta, or 0.5)")
    p.add_argument("--beta", type=float, help="signal weight (default 1 - alpha, or 0.5)")
    p.add_argument("--epochs", type=int, default=epochs, help="full-batch epochs")
    p.add_argument("--lr", type=float, default=0.03, help="Adam learning rate")
    p.add_argument("--init", choices=("svd", "random"), default="svd", help="initialisation")
    p.add_argument("--svd-sample-ratio", type=float, default=1.0, help="column sampling ratio")
    p.add_argument("--svd-iters", type=int, default=100, help="simultaneous iteration steps")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--threads", type=int, default=0, help="BLAS thread cap (0 = library default)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ibg", formatter_class=_Formatter,
                                 description="Fit and use Intersecting Block Graphs.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fit", help="fit an IBG to a graph-signal", formatter_class=_Formatter)
    _graph_args(p)
    _fit_args(p)
    p.add_argument("--sgd", action="store_true", help="use subgraph SGD")
    p.add_argument("--sample-size", type=int, default=256, help="nodes per SGD step")
    p.add_argument("--steps", type=int, help="SGD steps (default: epochs * N / sample size)")
    p.add_argument("--out", required=True, help="output IBG factor file")
    p.add_argument("--report", help="also write the report here")

    p = sub.add_parser("init", help="SVD initialisation only", formatter_class=_Formatter)
    _graph_args(p)
    p.add_argument("--k", type=int, default=8, help="number of communities")
    p.add_argument("--svd-sample-ratio", type=float, default=1.0, help="column sampling ratio")
    p.add_argument("--svd-iters", type=int, default=100, help="simultaneous iteration steps")
    p.add_argument("--gamma", type=float, default=1.0, help="densification factor for the report")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output IBG factor file")

    p = sub.add_parser("certify", help="certified fit with a random rank", formatter_class=_Formatter)
    _graph_args(p)
    _fit_args(p, epochs=300)
    p.add_argument("--r-factor", "--r", dest="r_factor", type=int, default=2,
                   help="confidence factor R (K must be a multiple)")
    p.add_argument("--delta", type=float, default=0.3, help="slack on the estimated minima")
    p.add_argument("--restarts", type=int, default=3, help="fits per rank estimate")
    p.add_argument("--max-attempts", type=int, default=10, help="rank draws before giving up")
    p.add_argument("--max-n", type=int, default=12, help="largest N for the exact cut check")
    p.add_argument("--out", help="write the chosen factors here")
    p.set_defaults(k=16)

    p = sub.add_parser("train", help="train an IBG-NN node classifier", formatter_class=_Formatter)
    _graph_args(p)
    p.add_argument("--labels", required=True, help="integer label per node")
    p.add_argument("--masks", help="train/val/test/none tag per node (default: random 60/20/20)")
    p.add_argument("--factors", required=True, help="fitted IBG factor file")
    p.add_argument("--layers", type=int, default=2, help="IBG-NN layers")
    p.add_argument("--hidden", type=int, default=64, help="hidden width")
    p.add_argument("--dropout", type=float, default=0.0, help="dropout rate")
    p.add_argument("--residual", action="store_true", help="residual connections")
    p.add_argument("--jk", choices=("none", "max", "cat"), default="none", help="jumping knowledge")
    p.add_argument("--deepsets", action="store_true", help="DeepSets node maps")
    p.add_argument("--epochs", type=int, default=200, help="training epochs")
    p.add_argument("--lr", type=float, default=0.01, help="Adam learning rate")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--threads", type=int, default=0, help="BLAS thread cap (0 = library default)")
    p.add_argument("--out", help="write per-node predictions here")

    for name, hlp in (("kg-train", "train IbgE on a triples directory"),
                      ("kg-eval", "rank evaluation of IbgE factors")):
        p = sub.add_parser(name, help=hlp, formatter_class=_Formatter)
        p.add_argument("--triples", required=True, help="directory with train/valid/test.txt")
        if name == "kg-train":
            p.add_argument("--k", type=int, default=20, help="number of communities")
            p.add_argument("--gamma", type=float, default=1.0, help="non-link weight factor; strongly dataset dependent")
            p.add_argument("--margin", type=float, default=0.5, help="margin of the ranking loss")
            p.add_argument("--neg-samples", type=int, default=64, help="negatives per positive")
            p.add_argument("--epochs", type=int, default=250, help="training epochs")
            p.add_argument("--lr", type=float, default=0.05, help="Adam learning rate")
            p.add_argument("--batch-size", type=int, default=512, help="positives per step")
            p.add_argument("--eval-every", type=int, default=0,
                           help="validate every n epochs and keep the best (0 = off)")
            p.add_argument("--seed", type=int, default=0, help="random seed")
            p.add_argument("--threads", type=int, default=0, help="BLAS thread cap (0 = library default)")
            p.add_argument("--out", required=True, help="output IbgE factor file (.npz)")
        else:
            p.add_argument("--factors", required=True, help="IbgE factor file")
            p.add_argument("--split", choices=("valid", "test"), default="test", help="split to rank")
            p.add_argument("--raw", action="store_true", help="unfiltered ranking")

    p = sub.add_parser("cutnorm", help="exact densifying cut similarity (tiny graphs)",
                       formatter_class=_Formatter)
    _graph_args(p)
    p.add_argument("--factors", help="IBG factor file (default: the empty model)")
    p.add_argument("--gamma", type=float, help="densification factor (default: from the factor file, or 1)")
    p.add_argument("--alpha", type=float, help="graph weight (default 1 - beta, or 0.5)")
    p.add_argument("--beta", type=float, help="signal weight (default 1 - alpha, or 0.5)")
    p.add_argument("--max-n", type=int, default=12, help="refuse graphs with more nodes")

    p = sub.add_parser("gen-sbm", help="sample a planted directed SBM", formatter_class=_Formatter)
    p.add_argument("--blocks", default="2x200", help="NUMxSIZE blocks")
    p.add_argument("--pin", type=float, default=0.2, help="within-block edge probability")
    p.add_argument("--pout", type=float, default=0.02, help="between-block edge probability")
    p.add_argument("--feature-sep", type=float, default=0.5, help="block feature mean magnitude")
    p.add_argument("--noise", type=float, default=0.5, help="feature noise std")
    p.add_argument("--split", default="0.6,0.2,0.2", help="train,val,test fractions")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output directory")
    return ap


# --- helpers ----------------------------------------------------------------

def _weights(args):
    a, b = args.alpha, args.beta
    if a is None and b is None:
        return 0.5, 0.5
    if a is None:
        return 1.0 - b, b
    if b is None:
        return a, 1.0 - a
    return a, b


def _load_graph(args) -> DirectedGraphSignal:
    g = load_edge_list(args.edges, args.n_nodes)
    if getattr(args, "signal", None):
        g = g.with_signal(load_signal(args.signal, g.n_nodes))
    return g


def _fit_config(args, graph) -> FitConfig:
    alpha, beta = _weights(args)
    if not graph.n_features and args.alpha is None and args.beta is None:
        alpha, beta = 1.0, 0.0
    return FitConfig(k=args.k, gamma=args.gamma, alpha=alpha, beta=beta, lr=args.lr,
                     epochs=args.epochs, seed=args.seed, init=args.init,
                     svd_sample_ratio=args.svd_sample_ratio, svd_iters=args.svd_iters)


def _check_positive(**kw):
    for name, v in kw.items():
        if v is not None and v < 1:
            raise ValueError(f"--{name.replace('_', '-')} must be >= 1, got {v}")


# --- commands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    _check_positive(k=args.k, sample_size=args.sample_size)
    g = _load_graph(args)
    cfg = _fit_config(args, g)
    if args.sgd:
        M = min(args.sample_size, g.n_nodes)
        steps = args.steps if args.steps is not None else max(1, args.epochs * g.n_nodes // M)
        res = fit_sgd(g, cfg, M, steps)
        mode = [("mode", "sgd"), ("sample_size", M), ("steps", steps)]
    else:
        res = fit_full(g, cfg)
        mode = [("mode", "full"), ("epochs", cfg.epochs), ("best_epoch", res.best_epoch)]
    save_ibg(args.out, res.factors, cfg.gamma, cfg.alpha, cfg.beta)
    _emit([("n_nodes", g.n_nodes), ("n_edges", g.n_edges), ("n_features", g.n_features),
           ("k", cfg.k), ("gamma", cfg.gamma), ("alpha", cfg.alpha), ("beta", cfg.beta), *mode,
           ("initial_loss", _f(res.initial_loss)), ("final_loss", _f(res.loss)),
           ("graph_term", _f(res.graph_term)), ("signal_term", _f(res.signal_term)),
           ("factors", args.out)], args.report)
    return EXIT_OK


def cmd_init(args) -> int:
    _check_positive(k=args.k)
    g = _load_graph(args)
    beta = 0.5 if g.n_features else 0.0
    cfg = FitConfig(k=args.k, gamma=args.gamma, alpha=1.0 - beta, beta=beta, seed=args.seed,
                    init="svd", svd_sample_ratio=args.svd_sample_ratio, svd_iters=args.svd_iters)
    f = init_factors(g, cfg)
    save_ibg(args.out, f, cfg.gamma, cfg.alpha, cfg.beta)
    _emit([("n_nodes", g.n_nodes), ("k", cfg.k), ("loss", _f(loss_efficient(g, f, cfg))),
           ("factors", args.out)])
    return EXIT_OK


def cmd_certify(args) -> int:
    _check_positive(k=args.k, r_factor=args.r_factor, restarts=args.restarts,
                    max_attempts=args.max_attempts)
    g = _load_graph(args)
    cfg = _fit_config(args, g)
    cc = cert_mod.CertifyConfig(K=args.k, R=args.r_factor, delta=args.delta,
                                restarts=args.restarts, max_attempts=args.max_attempts)
    cert_mod.certificate_bounds(cc.delta, cc.R, cc.K, cfg.gamma, cfg.alpha, cfg.beta)
    report, f = cert_mod.run_certified_fit(g, cfg, cc)
    if g.n_nodes <= args.max_n:
        cert_mod.verify_cut_bound(g, f, report, max_n=args.max_n)
    if args.out:
        save_ibg(args.out, f, cfg.gamma, cfg.alpha, cfg.beta)
    sys.stdout.write(report.to_text())
    return EXIT_OK if report.accepted else EXIT_REJECTED


def cmd_train(args) -> int:
    g = _load_graph(args)
    labels = load_labels(args.labels, g.n_nodes)
    masks = load_masks(args.masks, g.n_nodes) if args.masks else random_split(g.n_nodes, seed=args.seed)
    g = DirectedGraphSignal(g.n_nodes, g.edges, g.X, labels, masks)
    f = load_ibg(args.factors)
    if f.n_nodes != g.n_nodes:
        raise ValueError(f"factor file has {f.n_nodes} nodes, graph has {g.n_nodes}")
    cfg = IbgnnConfig(layers=args.layers, hidden=args.hidden, dropout=args.dropout,
                      residual=args.residual, jk=args.jk, deepsets=args.deepsets,
                      lr=args.lr, epochs=args.epochs, seed=args.seed)
    res = train_node_classifier(g, f, cfg, masks)
    if args.out:
        X = g.X if g.n_features else np.zeros((g.n_nodes, 0))
        np.savetxt(args.out, predict(res.model, X, f), fmt="%d")
    rows = [(k, _f(v)) for k, v in sorted(res.metrics.items())]
    _emit([*rows, ("best_epoch", res.best_epoch),
           ("final_train_loss", _f(res.loss_trace[-1]) if res.loss_trace else "nan")])
    return EXIT_OK


def cmd_kg_train(args) -> int:
    _check_positive(k=args.k, neg_samples=args.neg_samples, batch_size=args.batch_size)
    kg = load_triples_dir(args.triples)
    cfg = IbgeConfig(k=args.k, gamma=args.gamma, margin=args.margin, n_neg=args.neg_samples,
                     epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                     eval_every=args.eval_every)
    res = train_ibge(kg, cfg)
    save_ibge(args.out, res.factors, kg)
    write_dictionaries(os.path.dirname(os.path.abspath(args.out)), kg)
    m = evaluate_ranking(res.factors, kg, kg.valid) if kg.valid.size else {}
    _emit([("entities", kg.n_entities), ("relations", kg.n_relations), ("train", kg.n_train),
           ("final_loss", _f(res.loss_trace[-1]) if res.loss_trace else "nan"),
           ("best_epoch", res.best_epoch),
           *[(f"valid_{k}", _f(v)) for k, v in m.items() if k != "n"], ("factors", args.out)])
    return EXIT_OK


def cmd_kg_eval(args) -> int:
    kg = load_triples_dir(args.triples)
    f = load_ibge(args.factors)
    if f.u_logit.shape[0] != kg.n_entities or f.M.shape[1] != kg.n_relations:
        raise ValueError("factor file does not match the triples' entity/relation counts")
    m = evaluate_ranking(f, kg, getattr(kg, args.split), filtered=not args.raw)
    _emit([("split", args.split), ("protocol", "raw" if args.raw else "filtered"),
           ("queries", m["n"]), *[(k, _f(v)) for k, v in m.items() if k != "n"]])
    return EXIT_OK


def cmd_cutnorm(args) -> int:
    g = _load_graph(args)
    if g.n_nodes > args.max_n:
        raise ValueError(f"exact cut norm refused: N={g.n_nodes} exceeds --max-n {args.max_n}")
    if args.factors:
        f, meta = load_ibg(args.factors, with_meta=True)
        C, P = synthesize(f)
    else:
        C = np.zeros((g.n_nodes, g.n_nodes))
        P = np.zeros((g.n_nodes, g.n_features))
        meta = {"gamma": 1.0}
        if not g.n_features:
            meta.update(alpha=1.0, beta=0.0)
    # explicit flags win; otherwise use the weights the factors were fitted with
    if args.alpha is None and args.beta is None and "alpha" in meta:
        alpha, beta = meta["alpha"], meta["beta"]
    else:
        alpha, beta = _weights(args)
    gamma = meta["gamma"] if args.gamma is None else args.gamma
    X = g.X if g.n_features else None
    sigma = densifying_cut_similarity(g.dense_adjacency(), X, C, P, gamma, alpha, beta,
                                      max_n=args.max_n)
    _emit([("n_nodes", g.n_nodes), ("gamma", gamma), ("alpha", alpha), ("beta", beta),
           ("cut_similarity", _f(sigma))])
    return EXIT_OK


def _parse_blocks(text):
    try:
        count, size = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"--blocks must look like NUMxSIZE, got {text!r}") from None
    if count < 1 or size < 1:
        raise ValueError("--blocks needs positive counts")
    return count, size


def cmd_gen_sbm(args) -> int:
    count, size = _parse_blocks(args.blocks)
    fracs = tuple(float(x) for x in args.split.split(","))
    if len(fracs) != 3 or any(x < 0 for x in fracs) or sum(fracs) > 1 + 1e-9:
        raise ValueError("--split needs three non-negative fractions summing to at most 1")
    # one feature per block, the block's own coordinate is raised
    means = np.full((count, count), -args.feature_sep / max(count - 1, 1)) if count > 1 else np.zeros((1, 1))
    np.fill_diagonal(means, args.feature_sep)
    spec = SbmSpec.planted([size] * count, args.pin, args.pout, means=means, noise=args.noise,
                           seed=args.seed)
    g = generate_sbm(spec)
    masks = random_split(g.n_nodes, fracs, seed=args.seed)
    g = DirectedGraphSignal(g.n_nodes, g.edges, g.X, g.labels, masks)
    save_graph(args.out, g)
    _emit([("n_nodes", g.n_nodes), ("n_edges", g.n_edges), ("blocks", count), ("out", args.out)])
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "init": cmd_init, "certify": cmd_certify, "train": cmd_train,
            "kg-train": cmd_kg_train, "kg-eval": cmd_kg_eval, "cutnorm": cmd_cutnorm,
            "gen-sbm": cmd_gen_sbm}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _threads(getattr(args, "threads", 0)):
            return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"ibg {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, GraphFormatError, DegenerateGraphError, FileNotFoundError, MemoryError) as exc:
        print(f"ibg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
