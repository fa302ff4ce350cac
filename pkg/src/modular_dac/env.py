"""Dynamic-configuration MDP over one (structure, problem) pair.

One step runs one full generation of the structure.  The observation is a
sequence of per-module tokens (16-bit id vector plus nine landscape and
progress features), the action assigns raw values to every controllable
module's configuration slots, and the reward is the normalised
improvement of the best-so-far objective.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .operators import (
    PopulationContext,
    exec_boundary,
    exec_crossover,
    exec_info_sharing,
    exec_initialization,
    exec_mutation,
    exec_niching,
    exec_pop_reduction,
    exec_pso_update,
    reduce_partitions,
    resolve_member,
    restart_triggered,
    select_indices,
)
from .problems import ProblemInstance
from .registry import RANDOM_DEFAULT, REGISTRY, SubModuleSpec, id_vector
from .structure import L_MAX, AlgorithmStructure

DELTA = 10.0
N_FEATURES = 9
ID_BITS = 16
C_MAX = REGISTRY.c_max
DEFAULT_NP = 50
DEFAULT_NP_MAX = 100
DEFAULT_NP_MIN = 4
DEFAULT_H = 100
ELITE_FRACTION = 0.1


class ConfigError(ValueError):
    """Rejected configuration (non-finite values or wrong shape)."""


@dataclass
class StateTokenSeq:
    """Padded token sequence for one structure (length ``L_MAX``)."""

    ids: np.ndarray  # (L_MAX, 16)
    feats: np.ndarray  # (L_MAX, 9)
    mask: np.ndarray  # (L_MAX,) active token
    ctrl: np.ndarray  # (L_MAX,) controllable token
    act_mask: np.ndarray  # (L_MAX, C_MAX) configuration slots in use

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())


@dataclass
class TaskState:
    structure: AlgorithmStructure
    instance: ProblemInstance
    H: int
    NP_max: int
    NP_min: int
    rng: np.random.Generator
    X: np.ndarray
    f: np.ndarray
    V: np.ndarray
    pbest: np.ndarray
    pbest_f: np.ndarray
    archive_X: np.ndarray
    archive_f: np.ndarray
    partitions: list
    f_best_0: float
    f_best: float
    x_best: np.ndarray
    t: int = 0
    exemplar: np.ndarray | None = None
    stagnation: np.ndarray | None = None
    best_log: list = field(default_factory=list)
    evaluations: int = 0
    max_evaluations: int | None = None
    restarts: int = 0
    warnings: list = field(default_factory=list)
    trace: list | None = None
    episode: list = field(default_factory=list)

    @property
    def NP(self) -> int:
        return len(self.X)

    @property
    def done(self) -> bool:
        if self.t >= self.H:
            return True
        return self.max_evaluations is not None and self.evaluations >= self.max_evaluations

    @property
    def lb(self):
        return self.instance.lb

    @property
    def ub(self):
        return self.instance.ub


def _role(spec: SubModuleSpec) -> str:
    return spec.role if spec.is_multi else spec.slot


def _init_name(structure: AlgorithmStructure) -> str:
    return structure.registry.get(structure.trunk[0]).name


def _has(structure: AlgorithmStructure, category: str) -> bool:
    return any(s.category == category for s in structure.specs())


def population_sizes(structure: AlgorithmStructure, NP_max: int | None = None, NP_min: int | None = None):
    """Initial population size and reduction floor for a structure."""
    n_nich = max(1, structure.n_nich)
    if NP_max is None:
        NP_max = DEFAULT_NP_MAX if _has(structure, "Population_Reduction") else DEFAULT_NP
    NP_min = DEFAULT_NP_MIN if NP_min is None else NP_min
    NP_min = min(NP_max, max(NP_min, 4 * n_nich))
    return int(NP_max), int(NP_min)


def _evaluate(state: TaskState, X: np.ndarray) -> np.ndarray:
    """Evaluate rows; non-finite rows or values become ``+inf`` with a warning."""
    X = np.asarray(X, dtype=float)
    out = np.full(len(X), np.inf)
    ok = np.all(np.isfinite(X), axis=1)
    if ok.any():
        out[ok] = state.instance.evaluate(X[ok])
    state.evaluations += int(ok.sum())
    bad = ~np.isfinite(out)
    if bad.any():
        msg = f"t={state.t}: {int(bad.sum())} non-finite objective value(s) set to +inf"
        state.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        out[bad] = np.inf
    return out


def _update_best(state: TaskState) -> None:
    k = int(np.argmin(state.f))
    if state.f[k] < state.f_best:
        state.f_best = float(state.f[k])
        state.x_best = state.X[k].copy()


def reset(
    structure: AlgorithmStructure,
    instance: ProblemInstance,
    NP_max: int | None = None,
    H: int = DEFAULT_H,
    rng=None,
    *,
    NP_min: int | None = None,
    max_evaluations: int | None = None,
    record_trace: bool = False,
) -> tuple[TaskState, StateTokenSeq]:
    """Initialise, evaluate and (if niched) partition the population."""
    if H < 1:
        raise ValueError("horizon H must be >= 1")
    rng = np.random.default_rng(rng)
    n_nich = structure.n_nich
    NP_max, NP_min = population_sizes(structure, NP_max, NP_min)
    if NP_max < max(4, 2 * n_nich):
        raise ValueError(f"NP_max={NP_max} below the structural minimum {max(4, 2 * n_nich)}")
    bounds = (instance.lb, instance.ub)
    X = exec_initialization(_init_name(structure), NP_max, instance.dim, bounds, rng)
    state = TaskState(
        structure=structure,
        instance=instance,
        H=int(H),
        NP_max=NP_max,
        NP_min=NP_min,
        rng=rng,
        X=X,
        f=np.zeros(NP_max),
        V=np.zeros_like(X),
        pbest=X.copy(),
        pbest_f=np.zeros(NP_max),
        archive_X=np.empty((0, instance.dim)),
        archive_f=np.empty(0),
        partitions=[np.arange(NP_max)],
        f_best_0=math.inf,
        f_best=math.inf,
        x_best=X[0].copy(),
        max_evaluations=max_evaluations,
        trace=[] if record_trace else None,
    )
    state.f = _evaluate(state, X)
    state.pbest_f = state.f.copy()
    _update_best(state)
    state.f_best_0 = state.f_best
    state.best_log.append(state.f_best)
    if n_nich:
        # the niching ensemble runs its default member until the first action
        state.partitions = exec_niching("Niching_Rand", state.X, state.f, n_nich, rng)
    return state, tokens(state)


# ---------------------------------------------------------------- features


def _max_pairwise(X: np.ndarray) -> float:
    if len(X) < 2:
        return 0.0
    return float(np.max(pdist(X)))


def fdc(f: np.ndarray, d: np.ndarray) -> float:
    """Fitness-distance correlation as a Pearson coefficient (0 if degenerate)."""
    f = np.asarray(f, dtype=float)
    d = np.asarray(d, dtype=float)
    if len(f) < 2:
        return 0.0
    fc, dc = f - f.mean(), d - d.mean()
    sf, sd = math.sqrt(float(np.mean(fc * fc))), math.sqrt(float(np.mean(dc * dc)))
    if not (sf > 0 and sd > 0 and math.isfinite(sf) and math.isfinite(sd)):
        return 0.0
    return float(np.clip(np.mean(fc * dc) / (sf * sd), -1.0, 1.0))


def _fdc_of(X: np.ndarray, f: np.ndarray) -> float:
    ok = np.isfinite(f)
    X, f = X[ok], f[ok]
    if len(f) < 2:
        return 0.0
    best = X[int(np.argmin(f))]
    return fdc(f, np.linalg.norm(X - best, axis=1))


def featurize(state: TaskState, k: int | None = None) -> np.ndarray:
    """Nine features; 1-6 on partition ``k`` (whole population if ``None``)."""
    idx = state.partitions[k] if k is not None else np.arange(state.NP)
    X, f = state.X[idx], state.f[idx]
    f_star = state.instance.f_star
    denom = state.f_best_0 - f_star
    diam = state.instance.diameter

    def norm(v):
        if not denom > 0:
            return np.zeros_like(np.asarray(v, dtype=float))
        return np.clip((np.asarray(v, dtype=float) - f_star) / denom, 0.0, 1.0)

    g = norm(f)
    out = np.zeros(N_FEATURES)
    out[0] = g.min()
    out[1] = g.mean()
    out[2] = min(1.0, float(g.std()))
    spread = _max_pairwise(X) / diam
    out[3] = min(1.0, spread)
    n_top = max(1, math.ceil(ELITE_FRACTION * len(f)))
    top = X[np.argsort(f, kind="stable")[:n_top]]
    out[4] = float(np.clip(_max_pairwise(top) / diam - spread, -1.0, 1.0))
    out[5] = _fdc_of(X, f)
    out[6] = float(norm(state.f_best))
    out[7] = _fdc_of(state.X, state.f)
    out[8] = (state.H - state.t) / state.H
    return out


def tokens(state: TaskState) -> StateTokenSeq:
    return tokenize(state.structure, state)


def tokenize(structure: AlgorithmStructure, state: TaskState | None = None) -> StateTokenSeq:
    """Tokens for every non-Completed module; features need ``state``."""
    ids = np.zeros((L_MAX, ID_BITS))
    feats = np.zeros((L_MAX, N_FEATURES))
    mask = np.zeros(L_MAX, dtype=bool)
    ctrl = np.zeros(L_MAX, dtype=bool)
    act = np.zeros((L_MAX, C_MAX), dtype=bool)
    cache: dict = {}
    for pos, spec, branch in structure.layout():
        if spec.category == "Completed":
            continue
        ids[pos] = id_vector(spec.id)
        mask[pos] = True
        if spec.controllable:
            ctrl[pos] = True
            act[pos, : spec.config_size] = True
        if state is not None:
            if branch not in cache:
                cache[branch] = featurize(state, branch)
            feats[pos] = cache[branch]
    return StateTokenSeq(ids, feats, mask, ctrl, act)


# ------------------------------------------------------------------ config


def materialize_config(structure: AlgorithmStructure, raw) -> dict:
    """Map raw actions ``(L_MAX, >=config size)`` to parameter dicts by flat position."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] < structure.L - 1:
        raise ConfigError(f"raw actions must have shape (L_MAX, C_MAX), got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ConfigError("raw actions contain NaN or infinite values")
    out = {}
    for pos, spec, _ in structure.layout():
        if not spec.controllable:
            continue
        params = {}
        for d, p in enumerate(spec.config_space):
            a = min(1.0, max(0.0, float(raw[pos, d]))) if d < raw.shape[1] else 0.5
            if p.kind == "continuous":
                params[p.name] = p.low + a * (p.high - p.low)
            else:
                options = p.options
                if spec.slot == "Information_Sharing":
                    options = options[: max(1, structure.n_nich)]
                m = len(options)
                params[p.name] = options[min(int(math.floor(a * m)), m - 1)]
        out[pos] = params
    return out


def default_config(structure: AlgorithmStructure) -> dict:
    """Defaults of every controllable module; random defaults stay symbolic."""
    return {pos: spec.get_default_config() for pos, spec, _ in structure.layout() if spec.controllable}


def random_raw_actions(rng: np.random.Generator) -> np.ndarray:
    return rng.random((L_MAX, C_MAX))


def _check_config(config: dict) -> None:
    for pos, params in config.items():
        for name, v in params.items():
            if isinstance(v, (float, np.floating)) and not math.isfinite(v):
                raise ConfigError(f"module {pos}: parameter {name} is {v}")


# -------------------------------------------------------------------- step


def _trace(state: TaskState, pos: int, spec: SubModuleSpec, detail: str | None = None) -> None:
    if state.trace is not None:
        state.trace.append((state.t, pos, spec.name) if detail is None else (state.t, pos, spec.name, detail))


def _resolve(state: TaskState, spec: SubModuleSpec, params: dict):
    """Concrete operator name and parameters (ensembles resolved to a member)."""
    if spec.is_multi:
        member, mparams = resolve_member(spec, params, state.rng)
        return member.name, mparams
    return spec.name, params


def _archive_push(state: TaskState, X: np.ndarray, f: np.ndarray) -> None:
    if len(X) == 0:
        return
    state.archive_X = np.vstack([state.archive_X, X])
    state.archive_f = np.concatenate([state.archive_f, f])
    _archive_trim(state)


def _archive_trim(state: TaskState) -> None:
    cap = state.NP
    n = len(state.archive_f)
    if n > cap:
        keep = np.sort(state.rng.choice(n, cap, replace=False))
        state.archive_X, state.archive_f = state.archive_X[keep], state.archive_f[keep]


def _run_chain(state: TaskState, chain, idx: np.ndarray, config: dict, branch: int | None) -> None:
    bounds = (state.lb, state.ub)
    exemplar = stagnation = None
    if state.exemplar is not None and np.max(state.exemplar[idx], initial=0) < len(idx):
        # exemplars index within the partition; stale ones are refreshed
        exemplar, stagnation = state.exemplar[idx], state.stagnation[idx]
    ctx = PopulationContext(
        X=state.X[idx],
        f=state.f[idx],
        lb=state.lb,
        ub=state.ub,
        archive_X=state.archive_X,
        archive_f=state.archive_f,
        V=state.V[idx],
        pbest=state.pbest[idx],
        pbest_f=state.pbest_f[idx],
        exemplar=exemplar,
        stagnation=stagnation,
        n_nich=state.structure.n_nich or None,
    )
    ctx.gbest = ctx.pbest[int(np.argmin(ctx.pbest_f))]
    new_V = None
    for pos, spec in chain:
        role = _role(spec)
        params = config.get(pos, {})
        name, params = _resolve(state, spec, params) if spec.controllable else (spec.name, {})
        _trace(state, pos, spec, name if spec.is_multi else None)
        if role.startswith("Mutation"):
            ctx.trial = exec_mutation(name, ctx, params, state.rng)
        elif role.startswith("Crossover"):
            ctx.trial = exec_crossover(name, ctx, params, state.rng)
        elif role == "PSO_Update":
            ctx.trial, new_V = exec_pso_update(name, ctx, params, state.rng)
        elif role == "Boundary_Control":
            ctx.trial = exec_boundary(name, ctx.trial, bounds, state.rng)
        elif role == "Selection":
            _select(state, ctx, name, idx, new_V)
        elif role == "Information_Sharing":
            _share(state, params, branch)
        else:
            raise RuntimeError(f"{spec.name} cannot appear inside an operator chain")


def _select(state: TaskState, ctx: PopulationContext, name: str, idx: np.ndarray, new_V) -> None:
    n = len(idx)
    off_f = _evaluate(state, ctx.trial)
    pick = select_indices(name, ctx.X, ctx.trial, ctx.f, off_f, state.rng)
    pool_X = np.vstack([ctx.X, ctx.trial])
    pool_f = np.concatenate([ctx.f, off_f])
    V_old = state.V[idx]
    pool_V = np.vstack([V_old, V_old if new_V is None else new_V])
    lineage = pick % n
    displaced = np.setdiff1d(np.arange(n), pick[pick < n])
    _archive_push(state, ctx.X[displaced], ctx.f[displaced])
    state.X[idx] = pool_X[pick]
    state.f[idx] = pool_f[pick]
    state.V[idx] = pool_V[pick]
    pb, pbf = ctx.pbest[lineage], ctx.pbest_f[lineage]
    better = state.f[idx] < pbf
    state.pbest[idx] = np.where(better[:, None], state.X[idx], pb)
    state.pbest_f[idx] = np.where(better, state.f[idx], pbf)
    if ctx.exemplar is not None:
        if state.exemplar is None or state.exemplar.shape != state.X.shape:
            state.exemplar = np.zeros(state.X.shape, dtype=int)
            state.stagnation = np.zeros(state.NP, dtype=int)
        # exemplar entries index within the partition
        state.exemplar[idx] = ctx.exemplar[lineage]
        state.stagnation[idx] = np.where(better, 0, ctx.stagnation[lineage] + 1)
    _update_best(state)


def _share(state: TaskState, params: dict, branch: int | None) -> None:
    target = params.get("target", RANDOM_DEFAULT)
    n = len(state.partitions)
    if target == RANDOM_DEFAULT:
        target = int(state.rng.integers(0, n)) + 1
    t = min(int(target), n) - 1
    cur = 0 if branch is None else branch
    if t == cur:
        return
    dst = state.partitions[cur][int(np.argmax(state.f[state.partitions[cur]]))]
    state.X, state.f = exec_info_sharing(state.X, state.f, state.partitions, cur, t)
    state.V[dst] = 0.0
    state.pbest[dst], state.pbest_f[dst] = state.X[dst], state.f[dst]


def _reduce(state: TaskState, name: str) -> None:
    target = exec_pop_reduction(name, min(state.t + 1, state.H), state.H, state.NP_max, state.NP_min)
    if target >= state.NP:
        return
    parts = reduce_partitions(state.f, state.partitions, target)
    keep = np.sort(np.concatenate(parts))
    remap = -np.ones(state.NP, dtype=int)
    remap[keep] = np.arange(len(keep))
    for attr in ("X", "f", "V", "pbest", "pbest_f"):
        setattr(state, attr, getattr(state, attr)[keep])
    if state.exemplar is not None:
        state.exemplar, state.stagnation = None, None
    state.partitions = [remap[np.sort(p)] for p in parts]
    _archive_trim(state)


def _restart(state: TaskState, name: str) -> bool:
    if not restart_triggered(name, state.best_log, state.X, state.f, state.instance.diameter):
        return False
    bounds = (state.lb, state.ub)
    state.X = exec_initialization(_init_name(state.structure), state.NP, state.instance.dim, bounds, state.rng)
    state.f = _evaluate(state, state.X)
    state.V = np.zeros_like(state.X)
    state.pbest, state.pbest_f = state.X.copy(), state.f.copy()
    state.archive_X = np.empty((0, state.instance.dim))
    state.archive_f = np.empty(0)
    state.exemplar, state.stagnation = None, None
    state.best_log = []
    state.restarts += 1
    _update_best(state)
    return True


def _prepare_config(state: TaskState, config) -> dict:
    if config is None:
        return default_config(state.structure)
    if isinstance(config, dict):
        _check_config(config)
        return config
    return materialize_config(state.structure, config)


def step(state: TaskState, config=None) -> tuple[TaskState, StateTokenSeq, float, bool]:
    """Run one generation with ``config`` (raw action matrix, parameter dict, or ``None`` for defaults)."""
    if state.done:
        raise RuntimeError("episode already finished; call reset()")
    config = _prepare_config(state, config)
    structure = state.structure
    f_prev = state.f_best
    layout = structure.layout()
    trunk = [(p, s) for p, s, b in layout if b is None and p < len(structure.trunk)]
    niching = structure.niching
    if niching is not None:
        pos, spec = trunk[-1]
        name, _ = _resolve(state, spec, config.get(pos, {}))
        _trace(state, pos, spec, name)
        state.partitions = exec_niching(name, state.X, state.f, niching.n_nich, state.rng)
        for k in range(structure.n_nich):
            chain = [(p, s) for p, s, b in layout if b == k]
            _run_chain(state, chain, state.partitions[k], config, k)
    else:
        state.partitions = [np.arange(state.NP)]
        _run_chain(state, trunk[1:], state.partitions[0], config, None)
    tail = [(p, s) for p, s, b in layout if b is None and p >= len(structure.trunk)]
    for pos, spec in tail:
        _trace(state, pos, spec)
        if spec.category == "Population_Reduction":
            _reduce(state, spec.name)
        elif spec.category == "Restart_Strategy":
            _restart(state, spec.name)
    state.t += 1
    state.best_log.append(state.f_best)
    reward = reward_of(f_prev, state.f_best, state.f_best_0, state.instance.f_star)
    state.episode.append({"t": state.t, "f_best": state.f_best, "reward": reward, "config": _jsonable(config)})
    return state, tokens(state), reward, state.done


def reward_of(f_prev: float, f_cur: float, f0: float, f_star: float, delta: float = DELTA) -> float:
    denom = f0 - f_star
    if not denom > 0 or not math.isfinite(denom):
        return 0.0
    return delta * (f_prev - f_cur) / denom


def _jsonable(config: dict) -> dict:
    out = {}
    for pos, params in config.items():
        out[str(pos)] = {k: (v.item() if hasattr(v, "item") else v) for k, v in params.items()}
    return out


def dump_trace(state: TaskState, path) -> None:
    """Write the episode as JSON lines ``{t, f_best, reward, config}``."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in state.episode:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


class Env:
    """Stateful wrapper: ``obs = env.reset(); obs, r, done = env.step(action)``."""

    def __init__(self, structure, instance, *, H=DEFAULT_H, NP_max=None, NP_min=None, seed=None, record_trace=False):
        self.structure, self.instance = structure, instance
        self.H, self.NP_max, self.NP_min = H, NP_max, NP_min
        self.seed, self.record_trace = seed, record_trace
        self.state: TaskState | None = None

    def reset(self, seed=None) -> StateTokenSeq:
        self.state, obs = reset(
            self.structure,
            self.instance,
            self.NP_max,
            self.H,
            self.seed if seed is None else seed,
            NP_min=self.NP_min,
            record_trace=self.record_trace,
        )
        return obs

    def step(self, config=None):
        _, obs, r, done = step(self.state, config)
        return obs, r, done
