"""Certified fitting: draw a rank, fit, and accept only when the cut-norm certificate holds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import FitConfig, IbgFactors, eta_pair, synthesize
from .norms import densifying_cut_similarity


def _check(delta, R, K, alpha, beta):
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if R < 1 or K < 1:
        raise ValueError("R and K must be >= 1")
    if K % R:
        raise ValueError(f"K={K} must be a multiple of R={R}")
    if alpha < 0 or beta < 0 or not math.isclose(alpha + beta, 1.0):
        raise ValueError("need alpha, beta >= 0 with alpha + beta = 1")


def certificate_threshold(delta: float, R: int, K: int) -> float:
    """``sqrt(delta / (1 + delta) + R (1 + delta) / K)``."""
    return math.sqrt(delta / (1.0 + delta) + R * (1.0 + delta) / K)


def certificate_bounds(delta: float, R: int, K: int, gamma: float = 1.0,
                       alpha: float = 0.5, beta: float = 0.5):
    """Returns ``(prob_bound, coefficient)``.

    ``coefficient = sqrt(alpha (1 + gamma)) + sqrt(beta)``; by Cauchy-Schwarz
    it never exceeds ``sqrt(2 + gamma)``, which is the factor used in the
    high-probability bound.
    """
    _check(delta, R, K, alpha, beta)
    coeff = math.sqrt(alpha * (1.0 + gamma)) + math.sqrt(beta)
    return math.sqrt(2.0 + gamma) * certificate_threshold(delta, R, K), coeff


def certificate_gap(eta_m: float, eta_m1: float, delta: float) -> float:
    """``eta_m - eta_{m+1} / (1 + delta)``, clipped at zero."""
    return max(eta_m - eta_m1 / (1.0 + delta), 0.0)


def certificate_holds(eta_m: float, eta_m1: float, delta: float, R: int, K: int) -> bool:
    return math.sqrt(certificate_gap(eta_m, eta_m1, delta)) <= certificate_threshold(delta, R, K)


def deterministic_bound(eta_m: float, eta_m1: float, delta: float, gamma: float,
                        alpha: float, beta: float) -> float:
    coeff = math.sqrt(alpha * (1.0 + gamma)) + math.sqrt(beta)
    return coeff * math.sqrt(certificate_gap(eta_m, eta_m1, delta))


@dataclass
class CertifyConfig:
    K: int = 16
    R: int = 2
    delta: float = 0.3
    restarts: int = 3
    max_attempts: int = 10

    def __post_init__(self):
        if self.restarts < 1 or self.max_attempts < 1:
            raise ValueError("restarts and max_attempts must be >= 1")


@dataclass
class CertificateReport:
    K: int
    R: int
    delta: float
    gamma: float
    alpha: float
    beta: float
    m: int
    eta_m: float
    eta_m1: float
    det_bound: float
    prob_bound: float
    accepted: bool
    attempts: int
    tried: list = field(default_factory=list)
    cut_similarity: float | None = None

    def to_text(self) -> str:
        rows = [
            ("K", self.K), ("R", self.R), ("delta", self.delta), ("gamma", self.gamma),
            ("alpha", self.alpha), ("beta", self.beta), ("m", self.m),
            ("eta_m", f"{self.eta_m:.10g}"), ("eta_m1", f"{self.eta_m1:.10g}"),
            ("det_bound", f"{self.det_bound:.10g}"), ("prob_bound", f"{self.prob_bound:.10g}"),
            ("accepted", str(self.accepted).lower()), ("attempts", self.attempts),
            ("tried", ",".join(map(str, self.tried))),
        ]
        if self.cut_similarity is not None:
            rows.append(("cut_similarity", f"{self.cut_similarity:.10g}"))
        return "\n".join(f"{k}={v}" for k, v in rows) + "\n"


def run_certified_fit(graph, fit_cfg: FitConfig, cert: CertifyConfig, seed=None):
    """Draw ``m`` uniformly from ``1..K`` until the certificate holds.

    Returns ``(report, factors)``; the factors are the rank-``m`` fit of the
    last attempt, accepted or not.  Estimates are cached per rank, so a
    repeated draw costs nothing.
    """
    _check(cert.delta, cert.R, cert.K, fit_cfg.alpha, fit_cfg.beta)
    rng = np.random.default_rng(fit_cfg.seed if seed is None else seed)
    prob, _ = certificate_bounds(cert.delta, cert.R, cert.K, fit_cfg.gamma, fit_cfg.alpha, fit_cfg.beta)
    cache = {}
    tried = []
    for attempt in range(1, cert.max_attempts + 1):
        m = int(rng.integers(1, cert.K + 1))
        tried.append(m)
        if m not in cache:
            cache[m] = eta_pair(graph, m, replace(fit_cfg, k=m), cert.restarts, cert.delta)
        lo, hi = cache[m]
        ok = certificate_holds(lo.eta, hi.eta, cert.delta, cert.R, cert.K)
        if ok or attempt == cert.max_attempts:
            bound = deterministic_bound(lo.eta, hi.eta, cert.delta, fit_cfg.gamma,
                                        fit_cfg.alpha, fit_cfg.beta)
            report = CertificateReport(cert.K, cert.R, cert.delta, fit_cfg.gamma, fit_cfg.alpha,
                                       fit_cfg.beta, m, lo.eta, hi.eta, bound, prob, ok,
                                       attempt, tried)
            return report, lo.factors
    raise AssertionError("unreachable")


def verify_cut_bound(graph, factors: IbgFactors, report: CertificateReport, max_n: int = 12):
    """Exact cut similarity of the fit against the reported deterministic bound.

    Returns ``(passed, margin, sigma)`` with ``margin = bound - sigma``.  The
    estimates are local minima, so a pass is evidence, not a proof.
    """
    if graph.n_nodes > max_n:
        raise ValueError(f"exact verification needs N <= {max_n}, got {graph.n_nodes}")
    C, P = synthesize(factors)
    X = graph.X if graph.n_features else None
    sigma = densifying_cut_similarity(graph.dense_adjacency(), X, C, P, report.gamma,
                                      report.alpha, report.beta, max_n=max_n)
    report.cut_similarity = sigma
    margin = report.det_bound - sigma
    return margin >= 0, margin, sigma
