"""Survivor selection (minimisation throughout).

Every variant is expressed through :func:`select_indices`, which returns
indices into the pool ``vstack([parents, offspring])``; the environment
uses them to keep archives and personal bests consistent.
"""
from __future__ import annotations

import numpy as np

SELECTIONS = ("DE-like", "Crowding", "PSO-like", "Ranking", "Tournament", "Roulette")
RANK_P_PLUS = 1.5
RANK_P_MINUS = 0.5
ROULETTE_EPS = 1e-12


def ranking_probabilities(M: int) -> np.ndarray:
    """Linear ranking weights for ranks 1 (worst) .. M (best)."""
    if M == 1:
        return np.ones(1)
    i = np.arange(1, M + 1)
    return (RANK_P_MINUS + (RANK_P_PLUS - RANK_P_MINUS) * (i - 1) / (M - 1)) / M


def roulette_probabilities(fit: np.ndarray) -> np.ndarray:
    w = (np.max(fit) - fit) + ROULETTE_EPS
    return w / w.sum()


def _wheel(rng: np.random.Generator, probs: np.ndarray, n: int) -> np.ndarray:
    # inverse-CDF sampling with one uniform per survivor
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    u = rng.random(n)
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(probs) - 1)


def select_indices(variant: str, parents, offspring, parent_fit, offspring_fit, rng=None) -> np.ndarray:
    variant = variant.removeprefix("Sel_")
    parents = np.asarray(parents, dtype=float)
    offspring = np.asarray(offspring, dtype=float)
    pf = np.asarray(parent_fit, dtype=float)
    of = np.asarray(offspring_fit, dtype=float)
    NP = len(pf)
    if variant == "DE-like":
        return np.where(of <= pf, NP + np.arange(NP), np.arange(NP))
    if variant == "PSO-like":
        return NP + np.arange(len(of))
    if variant == "Crowding":
        # offspring compete one by one against the nearest member of the
        # current (already partly replaced) population
        src = np.arange(NP)
        cur_X, cur_f = parents.copy(), pf.copy()
        for i in range(len(of)):
            d = np.sum((cur_X - offspring[i]) ** 2, axis=1)
            j = int(np.argmin(d))
            if of[i] <= cur_f[j]:
                cur_X[j], cur_f[j], src[j] = offspring[i], of[i], NP + i
        return src
    pool_f = np.concatenate([pf, of])
    M = len(pool_f)
    if variant == "Ranking":
        # rank 1 = worst; ties keep pool order
        worst_first = np.argsort(-pool_f, kind="stable")
        return worst_first[_wheel(rng, ranking_probabilities(M), NP)]
    if variant == "Tournament":
        pairs = rng.integers(0, M, (NP, 2))
        a, b = pairs[:, 0], pairs[:, 1]
        return np.where(pool_f[a] <= pool_f[b], a, b)
    if variant == "Roulette":
        return _wheel(rng, roulette_probabilities(pool_f), NP)
    raise ValueError(f"unknown selection variant {variant!r}")


def exec_selection(variant: str, parents, offspring, parent_fit, offspring_fit, rng=None):
    """Return ``(next population, next fitness)`` of the parents' size."""
    idx = select_indices(variant, parents, offspring, parent_fit, offspring_fit, rng)
    pool = np.vstack([np.asarray(parents, dtype=float), np.asarray(offspring, dtype=float)])
    pool_f = np.concatenate([np.asarray(parent_fit, dtype=float), np.asarray(offspring_fit, dtype=float)])
    return pool[idx], pool_f[idx]
