"""Intersecting Block Graphs: densifying low-rank fits of directed graph-signals."""

from .certify import CertificateReport, CertifyConfig, certificate_bounds, run_certified_fit, verify_cut_bound
from .core import (DivergenceError, FitConfig, FitResult, IbgFactors, eta_estimate, eta_pair, fit_full,
                   grads, init_factors, loss_efficient, loss_naive, random_factors, synthesize)
from .graph_io import (DirectedGraphSignal, GraphFormatError, SbmSpec, generate_sbm, load_edge_list,
                       load_ibg, random_split, save_graph, save_ibg)
from .ibgnn import IbgnnConfig, analysis, synthesis, train_node_classifier
from .kg import IbgeConfig, KnowledgeGraph, evaluate_ranking, load_triples_dir, train_ibge
from .norms import densify_weights, densifying_cut_similarity, exact_matrix_cut_norm, uniform_gamma
from .subgraph_sgd import fit_sgd, sample_nodes, subgraph_loss_and_grads
from .svd_init import init_from_svd, mc_svd, svd_communities

__version__ = "0.1.0"
