"""Scalar-loop reference implementations of the operator formulas.

Each oracle consumes the random stream with the same calls as the
vectorised operator (same shapes, same order) but evaluates every formula
element by element with plain Python floats.
"""
from __future__ import annotations

import math

import numpy as np


# ------------------------------------------------------------- index draws


def distinct(rng, n_rows, pool, k, exclude=None):
    n_excl = 0 if exclude is None else len(exclude[0])
    if pool - n_excl < k:
        return rng.integers(0, pool, (n_rows, k)).tolist()
    keys = rng.random((n_rows, pool)).tolist()
    out = []
    for i in range(n_rows):
        banned = set(exclude[i]) if exclude is not None else set()
        cands = sorted((keys[i][c], c) for c in range(pool) if c not in banned)
        out.append([c for _, c in cands[:k]])
    return out


def top_p(rng, f, p, n_rows):
    order = sorted(range(len(f)), key=lambda i: (f[i], i))
    n = max(1, math.ceil(p * len(f) - 1e-12))
    picks = rng.integers(0, n, n_rows).tolist()
    return [order[k] for k in picks]


def _argmin(f):
    best = 0
    for i in range(1, len(f)):
        if f[i] < f[best]:
            best = i
    return best


# ---------------------------------------------------------------- mutation


def mutation(variant, X, f, archive, params, lb, ub, trial, rng):
    X = [list(map(float, r)) for r in X]
    f = list(map(float, f))
    NP, D = len(X), len(X[0])
    F1, F2 = params.get("F1", 0.5), params.get("F2", 0.5)
    p = params.get("p", 0.05)
    me = [[i] for i in range(NP)]
    best = X[_argmin(f)]
    U = X + [list(map(float, r)) for r in archive]
    V = [[0.0] * D for _ in range(NP)]

    def fill(fn):
        for i in range(NP):
            for j in range(D):
                V[i][j] = fn(i, j)

    if variant == "DE/rand/1":
        r = distinct(rng, NP, NP, 3, me)
        fill(lambda i, j: X[r[i][0]][j] + F1 * (X[r[i][1]][j] - X[r[i][2]][j]))
    elif variant == "DE/rand/2":
        r = distinct(rng, NP, NP, 5, me)
        fill(lambda i, j: X[r[i][0]][j] + F1 * (X[r[i][1]][j] - X[r[i][2]][j]) + F2 * (X[r[i][3]][j] - X[r[i][4]][j]))
    elif variant == "DE/best/1":
        r = distinct(rng, NP, NP, 2, me)
        fill(lambda i, j: best[j] + F1 * (X[r[i][0]][j] - X[r[i][1]][j]))
    elif variant == "DE/best/2":
        r = distinct(rng, NP, NP, 4, me)
        fill(lambda i, j: best[j] + F1 * (X[r[i][0]][j] - X[r[i][1]][j]) + F2 * (X[r[i][2]][j] - X[r[i][3]][j]))
    elif variant == "DE/current-to-best/1":
        r = distinct(rng, NP, NP, 2, me)
        fill(lambda i, j: X[i][j] + F1 * (best[j] - X[i][j]) + F2 * (X[r[i][0]][j] - X[r[i][1]][j]))
    elif variant == "DE/current-to-rand/1":
        r = distinct(rng, NP, NP, 3, me)
        fill(lambda i, j: X[i][j] + F1 * (X[r[i][0]][j] - X[i][j]) + F2 * (X[r[i][1]][j] - X[r[i][2]][j]))
    elif variant == "DE/rand-to-best/1":
        r = distinct(rng, NP, NP, 2, me)
        fill(lambda i, j: X[r[i][0]][j] + F1 * (best[j] - X[r[i][1]][j]))
    elif variant == "DE/current-to-pbest/1":
        pb = top_p(rng, f, p, NP)
        r = distinct(rng, NP, NP, 2, me)
        fill(lambda i, j: X[i][j] + F1 * (X[pb[i]][j] - X[i][j]) + F2 * (X[r[i][0]][j] - X[r[i][1]][j]))
    elif variant == "DE/current-to-pbest/1+archive":
        pb = top_p(rng, f, p, NP)
        r1 = distinct(rng, NP, NP, 1, me)
        r2 = distinct(rng, NP, len(U), 1, [[i, r1[i][0]] for i in range(NP)])
        fill(lambda i, j: X[i][j] + F1 * (X[pb[i]][j] - X[i][j]) + F2 * (X[r1[i][0]][j] - U[r2[i][0]][j]))
    elif variant == "DE/weighted-rand-to-pbest/1":
        pb = top_p(rng, f, p, NP)
        r = distinct(rng, NP, NP, 2, me)
        fill(lambda i, j: F1 * X[r[i][0]][j] + F1 * F2 * (X[pb[i]][j] - X[r[i][1]][j]))
    elif variant == "DE/current-to-rand/1+archive":
        r = distinct(rng, NP, NP, 2, me)
        r3 = distinct(rng, NP, len(U), 1, [[i, r[i][0], r[i][1]] for i in range(NP)])
        fill(lambda i, j: X[i][j] + F1 * (X[r[i][0]][j] - X[i][j]) + F2 * (X[r[i][1]][j] - U[r3[i][0]][j]))
    elif variant == "Gaussian_mutation":
        base = trial if trial is not None else X
        sigma = params.get("sigma", 0.1)
        z = rng.standard_normal((NP, D)).tolist()
        fill(lambda i, j: base[i][j] + sigma * (ub - lb) * z[i][j])
    elif variant == "Polynomial_mutation":
        base = trial if trial is not None else X
        e = 1.0 / (1.0 + params.get("eta_m", 20.0))
        u = rng.random((NP, D)).tolist()

        def poly(i, j):
            x, uu = base[i][j], u[i][j]
            if uu <= 0.5:
                return x + ((2.0 * uu) ** e - 1.0) * (x - lb)
            return x + (1.0 - (2.0 - 2.0 * uu) ** e) * (ub - x)

        fill(poly)
    else:
        raise ValueError(variant)
    return np.array(V)


# --------------------------------------------------------------- crossover


def _binomial_mask(rng, NP, D, Cr):
    jrand = rng.integers(0, D, NP).tolist()
    r = rng.random((NP, D)).tolist()
    return [[(r[i][j] < Cr) or j == jrand[i] for j in range(D)] for i in range(NP)]


def crossover(variant, X, f, archive, trial, params, rng):
    X = [list(map(float, r)) for r in X]
    NP, D = len(X), len(X[0])
    Cr = params.get("Cr", 0.9)
    out = [row[:] for row in X]
    if variant == "Binomial":
        m = _binomial_mask(rng, NP, D, Cr)
        for i in range(NP):
            for j in range(D):
                if m[i][j]:
                    out[i][j] = trial[i][j]
    elif variant == "Exponential":
        k = rng.integers(0, D, NP)
        L = rng.integers(0, D - k).tolist()
        k = k.tolist()
        r = rng.random((NP, D)).tolist()
        for i in range(NP):
            for j in range(k[i], k[i] + L[i] + 1):
                if r[i][j] >= Cr:
                    break
                out[i][j] = trial[i][j]
    elif variant in ("qbest_Binomial", "qbest_Binomial+archive"):
        p = params.get("p", 0.5 if variant == "qbest_Binomial" else 0.18)
        pool_X, pool_f = list(X), list(map(float, f))
        if variant.endswith("archive"):
            pool_X += [list(map(float, a)) for a in archive[0]]
            pool_f += list(map(float, archive[1]))
        d = top_p(rng, pool_f, p, NP)
        m = _binomial_mask(rng, NP, D, Cr)
        for i in range(NP):
            for j in range(D):
                out[i][j] = trial[i][j] if m[i][j] else pool_X[d[i]][j]
    elif variant == "SBX":
        eta = params.get("eta_c", 20.0)
        perm = rng.permutation(NP).tolist()
        first, second = perm[0::2], perm[1::2]
        if NP % 2:
            second = second + [perm[int(rng.integers(0, NP - 1))]]
        u = rng.random((len(first), D)).tolist()
        e = 1.0 / (1.0 + eta)
        for q in range(len(first)):
            for j in range(D):
                uu = u[q][j]
                beta = (2.0 * uu) ** e - 1.0 if uu <= 0.5 else (1.0 / (2.0 - 2.0 * uu)) ** e
                a, b = X[first[q]][j], X[second[q]][j]
                out[first[q]][j] = 0.5 * ((1.0 - beta) * a + (1.0 + beta) * b)
                if 2 * q + 1 < NP:
                    out[perm[2 * q + 1]][j] = 0.5 * ((1.0 + beta) * a + (1.0 - beta) * b)
    elif variant == "Arithmetic":
        a = params.get("alpha", 0.5)
        pp = distinct(rng, NP, NP, 2)
        for i in range(NP):
            for j in range(D):
                out[i][j] = (1.0 - a) * X[pp[i][0]][j] + a * X[pp[i][1]][j]
    else:
        raise ValueError(variant)
    return np.array(out)


# --------------------------------------------------------------------- PSO


def fdr_nbest(X, f):
    NP, D = len(X), len(X[0])
    nb = [[X[i][j] for j in range(D)] for i in range(NP)]
    for i in range(NP):
        for j in range(D):
            best, arg = -math.inf, None
            for q in range(NP):
                dist = abs(X[q][j] - X[i][j])
                if dist == 0:
                    continue
                ratio = (f[i] - f[q]) / dist
                if ratio > best:
                    best, arg = ratio, q
            if arg is not None:
                nb[i][j] = X[arg][j]
    return nb


def pso(variant, X, f, V, P, Pf, g, lb, ub, exemplar, stagnation, params, rng):
    X = [list(map(float, r)) for r in X]
    NP, D = len(X), len(X[0])
    w, c1, c2, c3 = 0.7, 1.49445, 1.49445, 2.0
    if variant == "FDR_PSO":
        w, c1, c2 = 0.729, 1.0, 1.0
    w = params.get("w", w)
    c1 = params.get("c1", c1)
    c2 = params.get("c2", c2)
    c3 = params.get("c3", c3)
    vmax = 0.2 * (ub - lb)

    def op(shape):
        return (1.0 - rng.random(shape)).tolist()

    vel = [[0.0] * D for _ in range(NP)]
    if variant == "Vanilla_PSO":
        r1, r2 = op((NP, D)), op((NP, D))
        for i in range(NP):
            for j in range(D):
                vel[i][j] = w * V[i][j] + c1 * r1[i][j] * (P[i][j] - X[i][j]) + c2 * r2[i][j] * (g[j] - X[i][j])
    elif variant == "FDR_PSO":
        r1, r2, r3 = op((NP, D)), op((NP, D)), op((NP, D))
        nb = fdr_nbest(X, list(map(float, f)))
        for i in range(NP):
            for j in range(D):
                vel[i][j] = (
                    w * V[i][j]
                    + c1 * r1[i][j] * (P[i][j] - X[i][j])
                    + c2 * r2[i][j] * (g[j] - X[i][j])
                    + c3 * r3[i][j] * (nb[i][j] - X[i][j])
                )
    elif variant == "CLPSO":
        if exemplar is None:
            ex = [[i] * D for i in range(NP)]
            rows = list(range(NP))
        else:
            ex = [list(map(int, r)) for r in exemplar]
            rows = [i for i in range(NP) if stagnation[i] >= 7]
        if rows:
            pc = [0.05 + (0.5 - 0.05) * i / (NP - 1) for i in range(NP)] if NP > 1 else [0.05]
            r = rng.random((len(rows), D)).tolist()
            ab = rng.integers(0, NP - 1, (len(rows), D, 2)).tolist()
            for q, i in enumerate(rows):
                for j in range(D):
                    a, b = [v + (v >= i) for v in ab[q][j]]
                    win = a if Pf[a] <= Pf[b] else b
                    ex[i][j] = i if r[q][j] > pc[i] else win
        r1, r2 = op((NP, D)), op((NP, D))
        for i in range(NP):
            for j in range(D):
                guide = P[ex[i][j]][j]
                vel[i][j] = w * V[i][j] + c1 * r1[i][j] * (guide - X[i][j]) + c2 * r2[i][j] * (g[j] - X[i][j])
    else:
        raise ValueError(variant)
    for i in range(NP):
        for j in range(D):
            vel[i][j] = min(max(vel[i][j], -vmax), vmax)
    return np.array([[X[i][j] + vel[i][j] for j in range(D)] for i in range(NP)]), np.array(vel)


# ---------------------------------------------------------------- boundary


def boundary(variant, X, lb, ub, rng):
    X = [list(map(float, r)) for r in X]
    NP, D = len(X), len(X[0])
    fresh = rng.random((NP, D)).tolist() if variant == "Rand" else None
    out = [row[:] for row in X]
    for i in range(NP):
        for j in range(D):
            x = X[i][j]
            if lb <= x <= ub:
                continue
            if variant == "Clip":
                out[i][j] = lb if x < lb else ub
            elif variant == "Rand":
                out[i][j] = lb + fresh[i][j] * (ub - lb)
            elif variant == "Periodic":
                out[i][j] = lb + (x - ub) % (ub - lb)
            elif variant in ("Reflect", "Halving"):
                k = 1.0 if variant == "Reflect" else 0.5
                for _ in range(200):
                    if x > ub:
                        x = ub - k * (x - ub)
                    elif x < lb:
                        x = lb - k * (x - lb)
                    else:
                        break
                out[i][j] = min(max(x, lb), ub)
            else:
                raise ValueError(variant)
    return np.array(out)


# --------------------------------------------------------------- selection


def _wheel(rng, probs, n):
    cdf, acc = [], 0.0
    for p in probs:
        acc += p
        cdf.append(acc)
    total = cdf[-1]
    cdf = [c / total for c in cdf]
    u = rng.random(n).tolist()
    out = []
    for x in u:
        k = next((m for m, c in enumerate(cdf) if c > x), len(cdf) - 1)
        out.append(k)
    return out


def selection(variant, parents, offspring, pf, of, rng):
    parents = [list(map(float, r)) for r in parents]
    offspring = [list(map(float, r)) for r in offspring]
    pf, of = list(map(float, pf)), list(map(float, of))
    NP = len(pf)
    pool = parents + offspring
    pool_f = pf + of
    M = len(pool_f)
    if variant == "DE-like":
        idx = [NP + i if of[i] <= pf[i] else i for i in range(NP)]
    elif variant == "PSO-like":
        idx = [NP + i for i in range(NP)]
    elif variant == "Crowding":
        idx = list(range(NP))
        cur = [(parents[i], pf[i]) for i in range(NP)]
        for i in range(len(of)):
            best_j, best_d = 0, math.inf
            for j in range(NP):
                d = sum((a - b) ** 2 for a, b in zip(cur[j][0], offspring[i]))
                if d < best_d:
                    best_j, best_d = j, d
            if of[i] <= cur[best_j][1]:
                cur[best_j] = (offspring[i], of[i])
                idx[best_j] = NP + i
    elif variant == "Ranking":
        worst_first = sorted(range(M), key=lambda k: (-pool_f[k], k))
        probs = [(0.5 + (1.5 - 0.5) * (r - 1) / (M - 1)) / M for r in range(1, M + 1)]
        idx = [worst_first[k] for k in _wheel(rng, probs, NP)]
    elif variant == "Tournament":
        pairs = rng.integers(0, M, (NP, 2)).tolist()
        idx = [a if pool_f[a] <= pool_f[b] else b for a, b in pairs]
    elif variant == "Roulette":
        top = max(pool_f)
        w = [(top - x) + 1e-12 for x in pool_f]
        s = sum(w)
        idx = _wheel(rng, [x / s for x in w], NP)
    else:
        raise ValueError(variant)
    return np.array([pool[k] for k in idx]), np.array([pool_f[k] for k in idx]), idx
