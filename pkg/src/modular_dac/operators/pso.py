from __future__ import annotations

import numpy as np

from .context import PopulationContext

PSO_UPDATES = ("Vanilla_PSO", "FDR_PSO", "CLPSO")
VELOCITY_FRACTION = 0.2
CLPSO_REFRESH_GAP = 7


def _uniform_open0(rng: np.random.Generator, shape) -> np.ndarray:
    # values in (0, 1]
    return 1.0 - rng.random(shape)


def fdr_nbest(X: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Per-dimension neighbour maximising the fitness-distance ratio.

    ``nbest[i, j] = X[p_j, j]`` with ``p_j = argmax_p (f_i - f_p) / |X[p, j] - X[i, j]|``;
    candidates at zero distance are skipped, and a particle with no
    candidate keeps its own coordinate.
    """
    diff = np.abs(X[None, :, :] - X[:, None, :])  # [i, p, j]
    gain = f[:, None] - f[None, :]  # [i, p]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = gain[:, :, None] / diff
    ratio = np.where(diff > 0, ratio, -np.inf)
    p = np.argmax(ratio, axis=1)  # first maximiser, [i, j]
    none = ~np.isfinite(np.max(ratio, axis=1))
    nbest = X[p, np.arange(X.shape[1])[None, :]]
    return np.where(none, X, nbest)


def clpso_learning_probability(NP: int) -> np.ndarray:
    if NP == 1:
        return np.array([0.05])
    return np.linspace(0.05, 0.5, NP)


def clpso_exemplar(ctx: PopulationContext, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Refresh exemplars of particles that are new or stagnated >= 7 generations.

    Draws, for the refreshed rows only: per-dimension uniforms, then two
    tournament contestants per dimension chosen among the other particles.
    Returns ``(exemplar, stagnation)`` with refreshed counters reset.
    """
    NP, D = ctx.X.shape
    exemplar = ctx.exemplar
    stagnation = ctx.stagnation if ctx.stagnation is not None else np.zeros(NP, dtype=int)
    if exemplar is None or exemplar.shape != (NP, D):
        exemplar = np.repeat(np.arange(NP)[:, None], D, axis=1)
        refresh = np.ones(NP, dtype=bool)
    else:
        exemplar = exemplar.copy()
        refresh = stagnation >= CLPSO_REFRESH_GAP
    rows = np.flatnonzero(refresh)
    if len(rows):
        pc = clpso_learning_probability(NP)
        r = rng.random((len(rows), D))
        if NP > 1:
            ab = rng.integers(0, NP - 1, (len(rows), D, 2))
            ab = ab + (ab >= rows[:, None, None])
        else:
            ab = np.zeros((len(rows), D, 2), dtype=int)
        pf = ctx.pbest_f
        winner = np.where(pf[ab[..., 0]] <= pf[ab[..., 1]], ab[..., 0], ab[..., 1])
        own = r > pc[rows][:, None]
        exemplar[rows] = np.where(own, rows[:, None], winner)
        stagnation = stagnation.copy()
        stagnation[rows] = 0
    return exemplar, stagnation


def exec_pso_update(
    variant: str, ctx: PopulationContext, params: dict | None, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(new positions, new velocities)``.

    Velocities are clamped to ``0.2 * (ub - lb)`` per dimension.  CLPSO
    stores its refreshed exemplar and counters back into ``ctx``.
    """
    prm = {"w": 0.7, "c1": 1.49445, "c2": 1.49445, "c3": 2.0}
    if variant == "FDR_PSO":
        prm.update({"w": 0.729, "c1": 1.0, "c2": 1.0})
    prm.update(params or {})
    X, V = ctx.X, ctx.V if ctx.V is not None else np.zeros_like(ctx.X)
    P, g = ctx.pbest, ctx.gbest
    vmax = VELOCITY_FRACTION * (np.asarray(ctx.ub, dtype=float) - np.asarray(ctx.lb, dtype=float))
    if variant == "Vanilla_PSO":
        r1 = _uniform_open0(rng, X.shape)
        r2 = _uniform_open0(rng, X.shape)
        vel = prm["w"] * V + prm["c1"] * r1 * (P - X) + prm["c2"] * r2 * (g - X)
    elif variant == "FDR_PSO":
        r1 = _uniform_open0(rng, X.shape)
        r2 = _uniform_open0(rng, X.shape)
        r3 = _uniform_open0(rng, X.shape)
        nb = fdr_nbest(X, ctx.f)
        vel = prm["w"] * V + prm["c1"] * r1 * (P - X) + prm["c2"] * r2 * (g - X) + prm["c3"] * r3 * (nb - X)
    elif variant == "CLPSO":
        exemplar, stagnation = clpso_exemplar(ctx, rng)
        ctx.exemplar, ctx.stagnation = exemplar, stagnation
        guide = P[exemplar, np.arange(X.shape[1])[None, :]]
        r1 = _uniform_open0(rng, X.shape)
        r2 = _uniform_open0(rng, X.shape)
        vel = prm["w"] * V + prm["c1"] * r1 * (guide - X) + prm["c2"] * r2 * (g - X)
    else:
        raise ValueError(f"unknown PSO update variant {variant!r}")
    vel = np.clip(vel, -vmax, vmax)
    return X + vel, vel
