"""Server-side aggregation math: pairwise model correlation over a probe set,
personalized convex mixing, and the plain weighted-average baseline."""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .nn import MLP, forward_batch


@dataclass(frozen=True)
class AggregationConfig:
    gamma: float = 0.5        # mixing coefficient: 0 = keep own model
    clamp_epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError("gamma must be in [0, 1]")
        if self.clamp_epsilon <= 0:
            raise DomainError("clamp_epsilon must be positive")


@dataclass
class CorrelationMatrix:
    """Pairwise correlation degrees; the diagonal is undefined (NaN)."""

    entries: np.ndarray  # (N, N), NaN diagonal

    @property
    def n_clients(self) -> int:
        return self.entries.shape[0]

    def row(self, n: int):
        """Correlation of client n with every other client, as (indices, values)."""
        others = [u for u in range(self.n_clients) if u != n]
        return others, self.entries[n, others]


def correlation_degree(emb_n, emb_u) -> float:
    """Sum over probe items of the cosine similarity of paired embeddings."""
    a = np.asarray(emb_n, dtype=np.float64)
    b = np.asarray(emb_u, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("embedding sequences must be (T, dim) and equal shape")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DomainError("zero-norm probe embedding")
    return float(((a * b).sum(axis=1) / (na * nb)).sum())


def build_correlation_matrix(models, probes: np.ndarray,
                             clamp_epsilon: float = 1e-6) -> CorrelationMatrix:
    """Correlation degrees between all model pairs on a shared probe set.

    Probe embeddings are computed once per model and reused across pairs;
    results are identical to the per-pair double loop. Raw degrees are
    clamped from below at clamp_epsilon so downstream weights stay positive.
    """
    models = list(models)
    n = len(models)
    if n < 2:
        raise DomainError("need at least 2 models")
    probes = np.asarray(probes, dtype=np.float64)
    arch = models[0].sizes
    for m in models:
        if m.sizes != arch:
            raise ShapeError("all models must share one architecture")
    embs = [forward_batch(m, probes)[0] for m in models]
    entries = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i + 1, n):
            r = max(correlation_degree(embs[i], embs[j]), clamp_epsilon)
            entries[i, j] = r
            entries[j, i] = r
    return CorrelationMatrix(entries)


def personalized_aggregate(params_list, corr: CorrelationMatrix,
                           cfg: AggregationConfig, n: int) -> np.ndarray:
    """Convex mix of the other clients' parameters with client n's own.

    out = gamma * sum_u (R[n,u] / sum_k R[n,k]) * params[u] + (1-gamma) * params[n]
    """
    params_list = [np.asarray(p, dtype=np.float64) for p in params_list]
    length = params_list[0].size
    for p in params_list:
        if p.shape != (length,):
            raise ShapeError("all parameter vectors must have equal length")
    if len(params_list) != corr.n_clients:
        raise ShapeError("parameter count does not match correlation matrix")
    if cfg.gamma == 0.0:
        return params_list[n].copy()
    others, r = corr.row(n)
    r_sum = float(r.sum())
    if r_sum <= 0:
        raise DomainError("correlation row sum must be positive")
    mix = np.zeros(length)
    for u, r_u in zip(others, r):
        mix += (r_u / r_sum) * params_list[u]
    return cfg.gamma * mix + (1.0 - cfg.gamma) * params_list[n]


def fedavg_aggregate(params_list, weights) -> np.ndarray:
    """Element-wise weighted mean of parameter vectors."""
    params_list = [np.asarray(p, dtype=np.float64) for p in params_list]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(params_list),):
        raise ShapeError("one weight per model required")
    if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-9:
        raise DomainError("weights must be nonnegative and sum to 1")
    length = params_list[0].size
    out = np.zeros(length)
    for w, p in zip(weights, params_list):
        if p.shape != (length,):
            raise ShapeError("all parameter vectors must have equal length")
        out += w * p
    return out
