"""Train IbgE on the Kinship triples and report filtered ranking metrics.

    python demos/kinship.py [data/kinship]

Takes a few minutes on one core.
"""

import sys
import time
from pathlib import Path

from ibg.kg import IbgeConfig, evaluate_ranking, load_triples_dir, train_ibge


def main(path):
    kg = load_triples_dir(path)
    print(f"{kg.n_entities} entities, {kg.n_relations} relations, {kg.n_train} train triples")
    t0 = time.perf_counter()
    res = train_ibge(kg, IbgeConfig(k=20, n_neg=64, epochs=250, lr=0.05, gamma=0.01, eval_every=25))
    for epoch, mrr in res.valid_trace:
        print(f"  epoch {epoch:4d}  valid MRR {mrr:.3f}")
    m = evaluate_ranking(res.factors, kg, kg.test)
    print(f"test (filtered): MRR {m['mrr']:.3f}  Hits@1 {m['hits1']:.3f}  Hits@3 {m['hits3']:.3f}  "
          f"Hits@10 {m['hits10']:.3f}  [{time.perf_counter() - t0:.0f}s]")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "data" / "kinship")
