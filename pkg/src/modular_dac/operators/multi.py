from __future__ import annotations

import numpy as np

from ..registry import RANDOM_DEFAULT, REGISTRY, SubModuleSpec
from .boundary import exec_boundary
from .context import PopulationContext
from .population import exec_niching
from .pso import exec_pso_update
from .variation import exec_crossover, exec_mutation


def resolve_member(spec: SubModuleSpec, config: dict, rng: np.random.Generator | None = None):
    """Pick the ensemble member named by ``config['op']`` and its parameters.

    ``op`` may be a member name, an integer index, or the random default
    (one ``rng.integers`` draw).  Shared parameters from ``config`` override
    the member's own defaults; parameters the member lacks are ignored.
    """
    names = spec.members
    op = config.get("op", spec.param("op").default)
    if op == RANDOM_DEFAULT:
        op = names[int(rng.integers(0, len(names)))]
    elif isinstance(op, (int, np.integer)):
        if not 0 <= op < len(names):
            raise IndexError(f"{spec.name}: op index {op} outside ensemble of {len(names)}")
        op = names[op]
    elif op not in names:
        raise IndexError(f"{spec.name}: {op!r} is not an ensemble member")
    member = REGISTRY.get(op)
    params = member.get_default_config()
    params.update({k: v for k, v in config.items() if k in params})
    return member, params


def exec_multi_strategy(spec, config: dict, ctx: PopulationContext, rng: np.random.Generator):
    """Run the selected member exactly as its own exec would.

    Boundary ensembles repair ``ctx.trial``; niching ensembles return the
    index partitions for ``spec.n_nich`` niches.
    """
    spec = REGISTRY.get(spec)
    member, params = resolve_member(spec, config, rng)
    role = spec.role
    if role.startswith("Mutation"):
        return exec_mutation(member.name, ctx, params, rng)
    if role.startswith("Crossover"):
        return exec_crossover(member.name, ctx, params, rng)
    if role == "PSO_Update":
        return exec_pso_update(member.name, ctx, params, rng)
    if role == "Boundary_Control":
        return exec_boundary(member.name, ctx.trial, (ctx.lb, ctx.ub), rng)
    if role == "Niching":
        return exec_niching(member.name, ctx.X, ctx.f, spec.n_nich, rng)
    raise ValueError(f"{spec.name}: unsupported ensemble role {role!r}")
