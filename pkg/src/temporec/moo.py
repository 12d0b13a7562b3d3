"""Min-norm gradient combination and Pareto-set bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


def normalize_gradient(grad: np.ndarray, empirical_loss: float) -> np.ndarray:
    if not empirical_loss > 0:
        raise ValueError(f"empirical loss must be positive, got {empirical_loss}")
    return grad / empirical_loss


def min_norm_pair(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """Simplex weights minimizing ``|a g1 + b g2|``; equal weights when the gradients coincide.

    The smaller weight is computed directly and the larger one as its
    complement, which keeps the small weight accurate when the gradient
    norms differ by orders of magnitude.
    """
    diff = g1 - g2
    denom = float(diff @ diff)
    if denom == 0.0:
        return np.array([0.5, 0.5])
    a = float(np.clip((-diff @ g2) / denom, 0.0, 1.0))
    b = float(np.clip((diff @ g1) / denom, 0.0, 1.0))
    return np.array([a, 1.0 - a]) if a <= b else np.array([1.0 - b, b])


def min_norm_2(g1: np.ndarray, g2: np.ndarray) -> float:
    """Weight on ``g1`` minimizing ``|a g1 + (1 - a) g2|``; 0.5 when they coincide."""
    return float(min_norm_pair(g1, g2)[0])


def _gram(gradients: Sequence[np.ndarray]) -> np.ndarray:
    m = np.stack([np.asarray(g, dtype=np.float64) for g in gradients])
    return m @ m.T


def frank_wolfe_min_norm(gram: np.ndarray, max_iter: int = 100, tol: float = 1e-9) -> np.ndarray:
    """Min-norm point of the convex hull, given the Gram matrix of its vertices.

    Fully corrective Frank-Wolfe (Wolfe's min-norm-point method): each major
    step adds the vertex minimizing the linearization, then the weights are
    re-optimized exactly over the active vertices. Stops when the duality gap
    ``|v|^2 - min_j v.g_j`` falls below ``tol``.
    """
    n = gram.shape[0]
    start = int(np.argmin(np.diag(gram)))
    active = [start]
    lam = np.array([1.0])
    for _ in range(max_iter):
        alpha = np.zeros(n)
        alpha[active] = lam
        gv = gram @ alpha
        vv = float(alpha @ gv)
        j = int(np.argmin(gv))
        if vv - gv[j] <= tol or j in active:
            break
        active.append(j)
        lam = np.append(lam, 0.0)
        # minor cycle: affine min-norm over the active set, pulled back into the simplex
        while True:
            sub = gram[np.ix_(active, active)]
            k = len(active)
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = sub
            kkt[:k, k] = kkt[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            # one refinement pass: large Gram entries cost several digits otherwise
            sol += np.linalg.lstsq(kkt, rhs - kkt @ sol, rcond=None)[0]
            mu = sol[:k]
            if (mu > 1e-15).all():
                lam = mu
                break
            neg = mu <= 1e-15
            theta = min(1.0, float(np.min(lam[neg] / (lam[neg] - mu[neg]))))
            lam = lam + theta * (mu - lam)
            keep = lam > 1e-15
            active = [a for a, kk in zip(active, keep) if kk]
            lam = lam[keep]
            lam = lam / lam.sum()
    alpha = np.zeros(n)
    alpha[active] = lam
    return alpha


def qcop_min_norm(gradients: Sequence[np.ndarray], *, force_iterative: bool = False) -> np.ndarray:
    """Simplex weights of the smallest-norm convex combination of ``gradients``."""
    if len(gradients) == 0:
        raise ValueError("no gradients given")
    if len({np.shape(g) for g in gradients}) != 1:
        raise ValueError("gradients differ in length")
    if len(gradients) == 1:
        return np.ones(1)
    if len(gradients) == 2 and not force_iterative:
        return min_norm_pair(np.asarray(gradients[0], float), np.asarray(gradients[1], float))
    return frank_wolfe_min_norm(_gram(gradients))


def combine(gradients: Sequence[np.ndarray], alpha: np.ndarray) -> np.ndarray:
    out = np.zeros_like(gradients[0], dtype=np.float64)
    for a, g in zip(alpha, gradients):
        out += a * g
    return out


def pareto_dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff ``a`` is at least as good everywhere and strictly better somewhere (larger is better)."""
    if len(a) != len(b):
        raise ValueError("metric vectors differ in length")
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


@dataclass
class ParetoEntry:
    metrics: tuple[float, ...]
    epoch: int
    checkpoint: Any = None


@dataclass
class ParetoSet:
    """Non-dominated entries; equal metric vectors are all kept."""

    entries: list[ParetoEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def update(self, metrics: Sequence[float], epoch: int, checkpoint: Any = None) -> bool:
        """Insert unless dominated; evict what the newcomer dominates. Returns whether it was kept."""
        metrics = tuple(float(m) for m in metrics)
        if any(pareto_dominates(e.metrics, metrics) for e in self.entries):
            return False
        self.entries = [e for e in self.entries if not pareto_dominates(metrics, e.metrics)]
        self.entries.append(ParetoEntry(metrics, epoch, checkpoint))
        return True

    def best(self, index: int = 0) -> ParetoEntry:
        """Entry maximizing metric ``index``; ties go to the earliest epoch."""
        if not self.entries:
            raise ValueError("empty Pareto set")
        return max(self.entries, key=lambda e: (e.metrics[index], -e.epoch))

    def points(self) -> list[tuple[float, ...]]:
        return [e.metrics for e in self.entries]


def front_verdict(front_a: Sequence[Sequence[float]], front_b: Sequence[Sequence[float]]) -> str:
    """``"A dominates B"`` when every point of B is dominated by some point of A
    and not vice versa; ``"neither"`` otherwise."""
    if not front_a or not front_b:
        raise ValueError("empty Pareto front")

    def covers(x, y):
        return all(any(pareto_dominates(p, q) for p in x) for q in y)

    a_over_b, b_over_a = covers(front_a, front_b), covers(front_b, front_a)
    if a_over_b and not b_over_a:
        return "A dominates B"
    if b_over_a and not a_over_b:
        return "B dominates A"
    return "neither"
