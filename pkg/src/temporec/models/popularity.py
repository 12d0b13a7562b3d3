from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def fit_popularity(train: sp.csr_matrix) -> np.ndarray:
    """Per-item interaction counts."""
    if train.nnz == 0:
        raise ValueError("cannot fit popularity on an empty matrix")
    return np.asarray(train.getnnz(axis=0), dtype=np.float64)


class PopularityModel:
    name = "popularity"

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.float64)

    @classmethod
    def fit(cls, train: sp.csr_matrix) -> "PopularityModel":
        return cls(fit_popularity(train))

    @property
    def n_items(self) -> int:
        return len(self.counts)

    def score(self, x: sp.spmatrix) -> np.ndarray:
        if x.shape[1] != self.n_items:
            raise ValueError(f"expected {self.n_items} columns, got {x.shape[1]}")
        return np.tile(self.counts, (x.shape[0], 1))
