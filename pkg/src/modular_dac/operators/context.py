from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PopulationContext:
    """Everything an operator may read about one (sub-)population.

    ``trial`` holds the working offspring matrix produced by the previous
    operator in the chain, if any.
    """

    X: np.ndarray
    f: np.ndarray
    lb: float | np.ndarray
    ub: float | np.ndarray
    archive_X: np.ndarray | None = None
    archive_f: np.ndarray | None = None
    trial: np.ndarray | None = None
    V: np.ndarray | None = None
    pbest: np.ndarray | None = None
    pbest_f: np.ndarray | None = None
    gbest: np.ndarray | None = None
    exemplar: np.ndarray | None = None
    stagnation: np.ndarray | None = None
    n_nich: int | None = None
    extras: dict = field(default_factory=dict)

    @property
    def NP(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def union(self) -> tuple[np.ndarray, np.ndarray]:
        """Population stacked on top of the archive."""
        if self.archive_X is None or len(self.archive_X) == 0:
            return self.X, self.f
        return np.vstack([self.X, self.archive_X]), np.concatenate([self.f, self.archive_f])
