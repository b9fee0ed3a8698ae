from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class EmbeddingPair:
    """Rows of F are f(x_i), rows of G are g(y_j)."""

    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if F.shape[1] != G.shape[1]:
            raise InvalidInput(f"F and G widths differ: {F.shape[1]} vs {G.shape[1]}")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(G))):
            raise InvalidInput("embedding entries must be finite")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)

    @property
    def r(self):
        return self.F.shape[1]

    def predict(self):
        return self.F @ self.G.T

    def predict_at(self, xs, ys):
        return np.einsum("ij,ij->i", self.F[xs], self.G[ys])
