"""Item recency weights and top-K ranking metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import ItemCatalog
from .protocols import EvalSplit

RECENCY_THRESHOLD = 0.8
RECENCY_BASE = 0.3
RECENCY_STEEPNESS = 10.0 / 3.0


def recency_value(
    t_x: float,
    t_min: float,
    t_max: float,
    threshold: float = RECENCY_THRESHOLD,
    base: float = RECENCY_BASE,
    steepness: float = RECENCY_STEEPNESS,
) -> float:
    """Recency of an item first seen at ``t_x``.

    Timestamps are min-max scaled to ``s`` in [0, 1]. Items with
    ``s >= threshold`` get 1, older ones decay as
    ``base ** ((threshold - s) * steepness)``, so f(0.5) = 0.3 with the
    defaults. A catalog spanning a single instant maps every item to 1.
    """
    if not t_min <= t_x <= t_max:
        raise ValueError(f"timestamp {t_x} outside [{t_min}, {t_max}]")
    if t_max == t_min:
        return 1.0
    s = (t_x - t_min) / (t_max - t_min)
    return _decay(np.float64(s), threshold, base, steepness).item()


def _decay(s: np.ndarray, threshold: float, base: float, steepness: float) -> np.ndarray:
    return np.where(s >= threshold, 1.0, base ** ((threshold - s) * steepness))


@dataclass(frozen=True, eq=False)
class RecencyWeights:
    weights: np.ndarray
    threshold: float = RECENCY_THRESHOLD
    base: float = RECENCY_BASE
    steepness: float = RECENCY_STEEPNESS

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, n_items: int) -> "RecencyWeights":
        return cls(np.ones(n_items))


def build_recency_weights(
    catalog: ItemCatalog,
    threshold: float = RECENCY_THRESHOLD,
    base: float = RECENCY_BASE,
    steepness: float = RECENCY_STEEPNESS,
) -> RecencyWeights:
    if not len(catalog):
        raise ValueError("empty catalog")
    first = catalog.first_seen.astype(np.float64)
    t_min, t_max = first.min(), first.max()
    if t_max == t_min:
        return RecencyWeights(np.ones(len(first)), threshold, base, steepness)
    s = (first - t_min) / (t_max - t_min)
    return RecencyWeights(_decay(s, threshold, base, steepness), threshold, base, steepness)


def _hits(ranked: Sequence[int], targets, k: int) -> list[int]:
    if k < 1:
        raise ValueError("K must be >= 1")
    targets = set(int(t) for t in targets)
    return [int(i) for i in ranked[:k] if int(i) in targets]


def recall_at_k(ranked: Sequence[int], targets, k: int) -> float:
    """Hits in the top ``k`` divided by ``min(k, |targets|)``."""
    if len(targets) == 0:
        raise ValueError("recall is undefined for an empty target set")
    return len(_hits(ranked, targets, k)) / min(k, len(targets))


def precision_at_k(ranked: Sequence[int], targets, k: int) -> float:
    return len(_hits(ranked, targets, k)) / k


def recency_at_k(ranked: Sequence[int], targets, k: int, weights: RecencyWeights | np.ndarray) -> float:
    """Summed recency weight of the relevant items among the top ``k`` (range [0, k])."""
    w = weights.weights if isinstance(weights, RecencyWeights) else np.asarray(weights)
    total = 0.0
    for i in _hits(ranked, targets, k):
        total += float(w[i])
    return total


def top_k(scores: np.ndarray, k: int, exclude: sp.csr_matrix | None = None) -> np.ndarray:
    """Row-wise top ``k`` item indices, highest score first, ties by lower index.

    Items flagged in ``exclude`` (one CSR row per score row) rank below every
    unflagged item; they only show up when a row has fewer than ``k`` others.
    """
    scores = np.array(scores, dtype=np.float64, copy=True)
    if exclude is not None:
        rows = np.repeat(np.arange(exclude.shape[0]), np.diff(exclude.indptr))
        scores[rows, exclude.indices] = -np.inf
    k = min(k, scores.shape[1])
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


@dataclass
class MetricReport:
    protocol: str
    k: int
    n_users: int
    recall: float
    precision: float
    recency: float
    recency_normalized: float
    per_user: dict[str, list[float]] | None = field(default=None, repr=False)

    def to_dict(self, per_user: bool = False) -> dict:
        d = asdict(self)
        d["K"] = d.pop("k")
        if not per_user:
            d.pop("per_user")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def as_tuple(self) -> tuple[float, float]:
        return self.recall, self.recency


# maps an (n_users x n_items) CSR matrix of input rows to dense scores
Scorer = Callable[[sp.csr_matrix], np.ndarray]


def _mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values) if len(values) else 0.0


def evaluate(
    scorer: Scorer,
    split: EvalSplit,
    ks: Sequence[int],
    weights: RecencyWeights,
    *,
    batch_size: int = 1024,
    keep_per_user: bool = False,
) -> list[MetricReport]:
    """Score every evaluated user over the full item set and aggregate metrics.

    Input items are masked before ranking; metric means are summed in user
    order so results do not depend on batching.
    """
    n_items = len(weights)
    if min(ks) < 1:
        raise ValueError("K must be >= 1")
    kmax = max(ks)
    inputs = split.input_matrix(n_items)
    targets = split.target_matrix(n_items)
    w = weights.weights

    per_k = {k: {"recall": [], "precision": [], "recency": [], "recency_normalized": []} for k in ks}
    for start in range(0, len(split), batch_size):
        x = inputs[start:start + batch_size]
        scores = np.asarray(scorer(x))
        if scores.shape != (x.shape[0], n_items):
            raise ValueError(f"scorer returned shape {scores.shape}, expected {(x.shape[0], n_items)}")
        if not np.isfinite(scores).all():
            raise ValueError("scorer returned non-finite scores")
        ranked = top_k(scores, kmax, exclude=x)
        t = targets[start:start + batch_size]
        relevant = np.take_along_axis(t.toarray() > 0, ranked, axis=1)
        n_targets = np.diff(t.indptr)
        gains = np.where(relevant, w[ranked], 0.0)
        hits = np.cumsum(relevant, axis=1)
        # cumsum accumulates left to right, i.e. in rank order
        recency = np.cumsum(gains, axis=1)
        for k in ks:
            kk = min(k, ranked.shape[1])
            denom = np.minimum(k, n_targets)
            per_k[k]["recall"].append(hits[:, kk - 1] / denom)
            per_k[k]["precision"].append(hits[:, kk - 1] / k)
            per_k[k]["recency"].append(recency[:, kk - 1])
            per_k[k]["recency_normalized"].append(recency[:, kk - 1] / denom)

    reports = []
    for k in ks:
        vals = {name: np.concatenate(parts) if parts else np.zeros(0) for name, parts in per_k[k].items()}
        reports.append(
            MetricReport(
                protocol=split.protocol,
                k=k,
                n_users=len(split),
                recall=_mean(vals["recall"]),
                precision=_mean(vals["precision"]),
                recency=_mean(vals["recency"]),
                recency_normalized=_mean(vals["recency_normalized"]),
                per_user={n: v.tolist() for n, v in vals.items()} if keep_per_user else None,
            )
        )
    return reports
