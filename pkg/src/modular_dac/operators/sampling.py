"""Initialization variants and shared random-index helpers.

All helpers draw from an explicit ``numpy.random.Generator`` in a fixed
order so that independent re-implementations can replay the stream.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.stats import qmc


class SmallPopulationWarning(RuntimeWarning):
    """Too few individuals to draw the requested distinct indices."""


def distinct_indices(rng: np.random.Generator, n_rows: int, pool: int, k: int, exclude=None) -> np.ndarray:
    """Draw ``k`` indices per row from ``range(pool)``, distinct within a row.

    One uniform key per (row, candidate) is drawn with
    ``rng.random((n_rows, pool))``; excluded candidates get an infinite key
    and the ``k`` smallest keys win (stable ordering).  If a row cannot
    supply ``k`` candidates, indices are instead drawn with replacement
    via ``rng.integers(0, pool, (n_rows, k))`` and a warning is emitted.
    """
    n_excl = 0 if exclude is None else np.asarray(exclude).reshape(n_rows, -1).shape[1]
    if pool - n_excl < k:
        warnings.warn(
            f"cannot draw {k} distinct indices from {pool} candidates; sampling with replacement",
            SmallPopulationWarning,
            stacklevel=2,
        )
        return rng.integers(0, pool, (n_rows, k))
    keys = rng.random((n_rows, pool))
    if exclude is not None:
        ex = np.asarray(exclude).reshape(n_rows, -1)
        rows = np.repeat(np.arange(n_rows), ex.shape[1])
        cols = ex.ravel()
        ok = cols < pool
        keys[rows[ok], cols[ok]] = np.inf
    return np.argsort(keys, axis=1, kind="stable")[:, :k]


def top_count(p: float, n: int) -> int:
    return max(1, int(math.ceil(p * n - 1e-12)))


def top_p_indices(rng: np.random.Generator, fitness: np.ndarray, p: float, n_rows: int) -> np.ndarray:
    """One index per row drawn uniformly from the best ``max(1, ceil(p*N))``."""
    order = np.argsort(fitness, kind="stable")
    n = top_count(p, len(fitness))
    return order[rng.integers(0, n, n_rows)]


def exec_initialization(variant: str, NP: int, dim: int, bounds, rng: np.random.Generator) -> np.ndarray:
    """Sample an ``NP x dim`` population inside ``bounds = (lb, ub)``."""
    if NP < 4:
        raise ValueError(f"population size must be >= 4, got {NP}")
    lb, ub = bounds
    lb = np.broadcast_to(np.asarray(lb, dtype=float), (dim,))
    ub = np.broadcast_to(np.asarray(ub, dtype=float), (dim,))
    if variant == "Uniform":
        unit = rng.random((NP, dim))
    elif variant == "Sobol":
        with warnings.catch_warnings():
            # balance properties need powers of two; any NP is accepted here
            warnings.simplefilter("ignore", UserWarning)
            unit = qmc.Sobol(dim, scramble=True, seed=rng).random(NP)
    elif variant == "Halton":
        unit = qmc.Halton(dim, scramble=True, seed=rng).random(NP)
    elif variant == "LHS":
        unit = qmc.LatinHypercube(dim, seed=rng).random(NP)
    elif variant == "Normal":
        x = rng.normal((ub + lb) / 2.0, (ub - lb) / 6.0, (NP, dim))
        return np.clip(x, lb, ub)
    else:
        raise ValueError(f"unknown initialization variant {variant!r}")
    return lb + unit * (ub - lb)
