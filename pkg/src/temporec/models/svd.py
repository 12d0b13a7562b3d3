"""Rank-d item factors from randomized subspace iteration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class SvdModel:
    item_factors: np.ndarray  # I x d, orthonormal columns
    singular_values: np.ndarray  # non-increasing

    name = "svd"

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def score(self, x) -> np.ndarray:
        """Project input rows onto the item subspace: ``(x V) V^T``."""
        if x.shape[1] != self.n_items:
            raise ValueError(f"expected {self.n_items} columns, got {x.shape[1]}")
        v = self.item_factors
        return np.asarray((x @ v) @ v.T)


def fit_truncated_svd(
    train: sp.spmatrix | np.ndarray, d: int, iters: int = 4, seed: int = 0, oversample: int = 10
) -> SvdModel:
    """Top-``d`` right singular vectors of the (binary) train matrix.

    Uses a Gaussian sketch refined by ``iters`` rounds of re-orthonormalized
    power iteration, then an exact SVD of the projected matrix.
    """
    n_rows, n_cols = train.shape
    if not 1 <= d <= min(n_rows, n_cols):
        raise ValueError(f"d={d} must lie in [1, {min(n_rows, n_cols)}]")
    x = sp.csr_matrix(train, dtype=np.float64) if sp.issparse(train) else np.asarray(train, dtype=np.float64)
    width = min(d + oversample, n_rows, n_cols)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(x @ rng.standard_normal((n_cols, width)))
    for _ in range(iters):
        w, _ = np.linalg.qr(x.T @ q)
        q, _ = np.linalg.qr(x @ w)
    b = np.asarray((x.T @ q).T)  # width x I
    _, s, vt = np.linalg.svd(b, full_matrices=False)
    return SvdModel(item_factors=vt[:d].T.copy(), singular_values=s[:d].copy())
