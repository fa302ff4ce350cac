"""Population-level operators: niching, restart, size reduction, sharing."""
from __future__ import annotations

import math

import numpy as np

NICHINGS = ("Rand", "Ranking", "Distance")
RESTARTS = ("Stagnation", "Obj_Convergence", "Solution_Convergence", "Obj&Solution_Convergence")
REDUCTIONS = ("Linear_Reduction", "Non-Linear_Reduction")

STAGNATION_GENERATIONS = 100
STAGNATION_TOL = 1e-10


def partition_sizes(NP: int, n_nich: int) -> list[int]:
    base, extra = divmod(NP, n_nich)
    return [base + (1 if k < extra else 0) for k in range(n_nich)]


def exec_niching(variant: str, X, f, n_nich: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Split ``range(NP)`` into ``n_nich`` disjoint index sets of near-equal size."""
    variant = variant.removeprefix("Niching_")
    X = np.asarray(X, dtype=float)
    NP = len(X)
    if NP < 2 * n_nich:
        raise ValueError(f"population of {NP} cannot form {n_nich} niches of at least 2")
    sizes = partition_sizes(NP, n_nich)
    cuts = np.cumsum(sizes)[:-1]
    if variant == "Rand":
        return [np.sort(p) for p in np.split(rng.permutation(NP), cuts)]
    if variant == "Ranking":
        return [np.sort(p) for p in np.split(np.argsort(np.asarray(f), kind="stable"), cuts)]
    if variant == "Distance":
        remaining = np.arange(NP)
        parts = []
        for size in sizes:
            seed = remaining[rng.integers(0, len(remaining))]
            d = np.sum((X[remaining] - X[seed]) ** 2, axis=1)
            d[remaining == seed] = -1.0  # the seed itself comes first
            take = remaining[np.argsort(d, kind="stable")[:size]]
            parts.append(np.sort(take))
            remaining = np.setdiff1d(remaining, take)
        return parts
    raise ValueError(f"unknown niching variant {variant!r}")


def restart_triggered(variant: str, best_log, X, f, diameter: float) -> bool:
    variant = variant.removeprefix("Restart_")
    X = np.asarray(X, dtype=float)
    f = np.asarray(f, dtype=float)
    if variant == "Stagnation":
        if len(best_log) <= STAGNATION_GENERATIONS:
            return False
        return best_log[-1 - STAGNATION_GENERATIONS] - best_log[-1] <= STAGNATION_TOL
    if variant == "Obj_Convergence":
        k = max(2, math.ceil(0.2 * len(f)))
        top = np.sort(f)[:k]
        return bool(top[-1] - top[0] < 1e-16)
    if variant == "Solution_Convergence":
        spread = np.max(X.max(axis=0) - X.min(axis=0))
        return bool(spread < 1e-16 * diameter)
    if variant == "Obj&Solution_Convergence":
        if np.ptp(f) >= 1e-8:
            return False
        diff = X[:, None, :] - X[None, :, :]
        return bool(np.sqrt(np.max(np.sum(diff**2, axis=-1))) < 0.005 * diameter)
    raise ValueError(f"unknown restart variant {variant!r}")


def exec_restart(variant: str, best_log, X, f, bounds, init_variant: str, rng: np.random.Generator):
    """Return ``(triggered, population)``; the population is re-sampled when triggered."""
    from .sampling import exec_initialization

    lb, ub = bounds
    X = np.asarray(X, dtype=float)
    diameter = float(np.linalg.norm(np.broadcast_to(np.asarray(ub) - np.asarray(lb), (X.shape[1],))))
    if not restart_triggered(variant, best_log, X, f, diameter):
        return False, X
    return True, exec_initialization(init_variant, len(X), X.shape[1], bounds, rng)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def exec_pop_reduction(variant: str, g: int, H: int, NP_max: int, NP_min: int) -> int:
    """Population size scheduled for generation ``g + 1``."""
    if NP_min < 4:
        raise ValueError("NP_min must be >= 4")
    if not 0 <= g <= H:
        raise ValueError(f"generation {g} outside [0, {H}]")
    frac = g / H if H else 1.0
    if variant in ("Linear", "Linear_Reduction"):
        return _round_half_up((NP_min - NP_max) * frac) + NP_max
    if variant in ("Non-Linear", "Non-Linear_Reduction"):
        return _round_half_up(NP_max * (NP_min / NP_max) ** frac)
    raise ValueError(f"unknown population reduction variant {variant!r}")


def reduce_partitions(f, partitions: list[np.ndarray], target: int) -> list[np.ndarray]:
    """Drop worst individuals until ``target`` remain.

    Each removal takes the worst member of the currently largest
    partition (lowest partition index on ties), keeping sizes balanced.
    """
    f = np.asarray(f, dtype=float)
    parts = [np.asarray(p) for p in partitions]
    total = sum(len(p) for p in parts)
    while total > target:
        k = int(np.argmax([len(p) for p in parts]))
        p = parts[k]
        worst = int(np.argmax(f[p]))
        parts[k] = np.delete(p, worst)
        total -= 1
    return parts


def exec_info_sharing(X, f, partitions, current: int, target: int):
    """Copy the best of ``partitions[target]`` over the worst of ``partitions[current]``."""
    X = np.array(X, dtype=float)
    f = np.array(f, dtype=float)
    if target == current:
        return X, f
    src = partitions[target][int(np.argmin(f[partitions[target]]))]
    dst = partitions[current][int(np.argmax(f[partitions[current]]))]
    X[dst], f[dst] = X[src], f[src]
    return X, f
