"""Mutation and crossover variants.

Random draws happen in the order listed in each variant's comment; the
operator tests replay the same order with scalar loops.
"""
from __future__ import annotations

import numpy as np

from .context import PopulationContext
from .sampling import distinct_indices, top_p_indices

MUTATIONS = (
    "DE/rand/1",
    "DE/rand/2",
    "DE/best/1",
    "DE/best/2",
    "DE/current-to-best/1",
    "DE/current-to-rand/1",
    "DE/rand-to-best/1",
    "DE/current-to-pbest/1",
    "DE/current-to-pbest/1+archive",
    "DE/weighted-rand-to-pbest/1",
    "DE/current-to-rand/1+archive",
    "Gaussian_mutation",
    "Polynomial_mutation",
)
CROSSOVERS = ("Binomial", "Exponential", "qbest_Binomial", "qbest_Binomial+archive", "SBX", "Arithmetic")
GA_MUTATIONS = ("Gaussian_mutation", "Polynomial_mutation")
GA_CROSSOVERS = ("SBX", "Arithmetic")

_DEFAULTS = {"F1": 0.5, "F2": 0.5, "p": 0.05, "sigma": 0.1, "eta_m": 20.0}


def _self_col(n: int) -> np.ndarray:
    return np.arange(n)[:, None]


def exec_mutation(variant: str, ctx: PopulationContext, params: dict | None, rng: np.random.Generator) -> np.ndarray:
    """Return the mutant matrix for every individual of ``ctx``.

    DE variants read ``ctx.X``; the GA variants mutate ``ctx.trial`` when a
    preceding crossover produced one, otherwise ``ctx.X``.
    """
    prm = dict(_DEFAULTS)
    prm.update(params or {})
    F1, F2 = prm["F1"], prm["F2"]
    X, f = ctx.X, ctx.f
    NP = X.shape[0]
    me = _self_col(NP)

    if variant == "DE/rand/1":
        r = distinct_indices(rng, NP, NP, 3, me)
        return X[r[:, 0]] + F1 * (X[r[:, 1]] - X[r[:, 2]])
    if variant == "DE/rand/2":
        r = distinct_indices(rng, NP, NP, 5, me)
        return X[r[:, 0]] + F1 * (X[r[:, 1]] - X[r[:, 2]]) + F2 * (X[r[:, 3]] - X[r[:, 4]])
    best = X[int(np.argmin(f))]
    if variant == "DE/best/1":
        r = distinct_indices(rng, NP, NP, 2, me)
        return best + F1 * (X[r[:, 0]] - X[r[:, 1]])
    if variant == "DE/best/2":
        r = distinct_indices(rng, NP, NP, 4, me)
        return best + F1 * (X[r[:, 0]] - X[r[:, 1]]) + F2 * (X[r[:, 2]] - X[r[:, 3]])
    if variant == "DE/current-to-best/1":
        r = distinct_indices(rng, NP, NP, 2, me)
        return X + F1 * (best - X) + F2 * (X[r[:, 0]] - X[r[:, 1]])
    if variant == "DE/current-to-rand/1":
        r = distinct_indices(rng, NP, NP, 3, me)
        return X + F1 * (X[r[:, 0]] - X) + F2 * (X[r[:, 1]] - X[r[:, 2]])
    if variant == "DE/rand-to-best/1":
        r = distinct_indices(rng, NP, NP, 2, me)
        return X[r[:, 0]] + F1 * (best - X[r[:, 1]])
    if variant == "DE/current-to-pbest/1":
        # draws: pbest pick, then two distinct indices
        pb = top_p_indices(rng, f, prm["p"], NP)
        r = distinct_indices(rng, NP, NP, 2, me)
        return X + F1 * (X[pb] - X) + F2 * (X[r[:, 0]] - X[r[:, 1]])
    if variant == "DE/current-to-pbest/1+archive":
        # draws: pbest pick, r1 from population, r2 from population+archive
        U, _ = ctx.union()
        pb = top_p_indices(rng, f, prm["p"], NP)
        r1 = distinct_indices(rng, NP, NP, 1, me)
        r2 = distinct_indices(rng, NP, len(U), 1, np.hstack([me, r1]))
        return X + F1 * (X[pb] - X) + F2 * (X[r1[:, 0]] - U[r2[:, 0]])
    if variant == "DE/weighted-rand-to-pbest/1":
        pb = top_p_indices(rng, f, prm["p"], NP)
        r = distinct_indices(rng, NP, NP, 2, me)
        return F1 * X[r[:, 0]] + F1 * F2 * (X[pb] - X[r[:, 1]])
    if variant == "DE/current-to-rand/1+archive":
        # draws: r1, r2 from population, r3 from population+archive
        U, _ = ctx.union()
        r12 = distinct_indices(rng, NP, NP, 2, me)
        r3 = distinct_indices(rng, NP, len(U), 1, np.hstack([me, r12]))
        return X + F1 * (X[r12[:, 0]] - X) + F2 * (X[r12[:, 1]] - U[r3[:, 0]])

    base = ctx.trial if ctx.trial is not None else X
    lb, ub = ctx.lb, ctx.ub
    if variant == "Gaussian_mutation":
        noise = rng.standard_normal(base.shape)
        return base + prm["sigma"] * (ub - lb) * noise
    if variant == "Polynomial_mutation":
        u = rng.random(base.shape)
        e = 1.0 / (1.0 + prm["eta_m"])
        low = base + ((2.0 * u) ** e - 1.0) * (base - lb)
        high = base + (1.0 - (2.0 - 2.0 * u) ** e) * (ub - base)
        return np.where(u <= 0.5, low, high)
    raise ValueError(f"unknown mutation variant {variant!r}")


def binomial_mask(rng: np.random.Generator, NP: int, D: int, Cr: float) -> np.ndarray:
    # jrand is drawn before the per-dimension uniforms
    jrand = rng.integers(0, D, NP)
    mask = rng.random((NP, D)) < Cr
    mask[np.arange(NP), jrand] = True
    return mask


def sbx_beta(u: np.ndarray, eta: float) -> np.ndarray:
    e = 1.0 / (1.0 + eta)
    with np.errstate(divide="ignore"):
        return np.where(u <= 0.5, (2.0 * u) ** e - 1.0, (1.0 / (2.0 - 2.0 * u)) ** e)


def exec_crossover(variant: str, ctx: PopulationContext, params: dict | None, rng: np.random.Generator) -> np.ndarray:
    """Return the offspring matrix (one row per individual).

    DE-style variants recombine ``ctx.X`` with the mutants in
    ``ctx.trial``; SBX and Arithmetic recombine randomly chosen parents of
    ``ctx.X``.
    """
    prm = {"Cr": 0.9, "eta_c": 20.0, "alpha": 0.5}
    prm.update(params or {})
    X = ctx.X
    NP, D = X.shape
    if variant == "Binomial":
        return np.where(binomial_mask(rng, NP, D, prm["Cr"]), ctx.trial, X)
    if variant == "Exponential":
        # draws: start k, length L in [0, D-1-k], then per-dimension uniforms
        k = rng.integers(0, D, NP)
        L = rng.integers(0, D - k)
        r = rng.random((NP, D))
        j = np.arange(D)
        in_seg = (j >= k[:, None]) & (j <= (k + L)[:, None])
        fail = in_seg & (r >= prm["Cr"])
        # a failure at position j stops the copy for every later position
        stopped = np.cumsum(fail, axis=1) > 0
        return np.where(in_seg & ~stopped, ctx.trial, X)
    if variant in ("qbest_Binomial", "qbest_Binomial+archive"):
        # draws: donor from the top p, then the binomial mask
        p = prm.get("p", 0.5 if variant == "qbest_Binomial" else 0.18)
        if variant == "qbest_Binomial":
            pool_X, pool_f = X, ctx.f
        else:
            pool_X, pool_f = ctx.union()
        donors = pool_X[top_p_indices(rng, pool_f, p, NP)]
        return np.where(binomial_mask(rng, NP, D, prm["Cr"]), ctx.trial, donors)
    if variant == "SBX":
        return _sbx(X, prm["eta_c"], rng)
    if variant == "Arithmetic":
        pp = distinct_indices(rng, NP, NP, 2)
        a = prm["alpha"]
        return (1.0 - a) * X[pp[:, 0]] + a * X[pp[:, 1]]
    raise ValueError(f"unknown crossover variant {variant!r}")


def _sbx(X: np.ndarray, eta: float, rng: np.random.Generator) -> np.ndarray:
    # draws: permutation, partner for an odd leftover, then one uniform per pair and dimension
    NP, D = X.shape
    perm = rng.permutation(NP)
    first, second = list(perm[0::2]), list(perm[1::2])
    if NP % 2:
        second.append(perm[rng.integers(0, NP - 1)])
    first, second = np.array(first), np.array(second)
    u = rng.random((len(first), D))
    beta = sbx_beta(u, eta)
    p1, p2 = X[first], X[second]
    c1 = 0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2)
    c2 = 0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2)
    out = np.empty_like(X)
    out[perm[0::2]] = c1
    out[perm[1::2]] = c2[: NP // 2]
    return out
