"""Task-set construction, baseline runs and the normalised performance metric.

For a task ``i`` the objective bounds pool every baseline and run:
``Obj_max = max f*_{b,g,0}`` and ``Obj_min = min f*_{b,g,H}``.  A
baseline's curve is the task- and run-averaged min-max normalised
best-so-far value, reported as ``1 - Obj``.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env as E
from .problems import HELDOUT_FUNCTIONS, TRAIN_FUNCTIONS, ProblemInstance, make_instance
from .structure import AlgorithmStructure, generate, parse, to_json_obj, validate

BASELINES = ("configx", "random", "original")
SPLITS = ("train", "test_in", "test_out_problem", "test_out_algorithm")
DEFAULT_DIMS = (5, 10, 20)
DEFAULT_RUNS = 11


@dataclass(frozen=True)
class Task:
    task_id: str
    structure: AlgorithmStructure
    problem: dict  # {fn_id, dim, seed}

    def instance(self) -> ProblemInstance:
        return make_instance(self.problem["fn_id"], int(self.problem["dim"]), int(self.problem["seed"]))

    @property
    def pair_key(self) -> tuple:
        return (self.structure.flat, self.problem["fn_id"], int(self.problem["dim"]))

    def to_json_obj(self) -> dict:
        return {"task_id": self.task_id, "structure": to_json_obj(self.structure), "problem": dict(self.problem)}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Task":
        structure = parse(json.dumps(obj["structure"]))
        v = validate(structure)
        if v is not None:
            raise ValueError(f"task {obj.get('task_id')}: {v}")
        return cls(obj["task_id"], structure, dict(obj["problem"]))


@dataclass
class TaskSet:
    name: str
    split_tag: str
    tasks: list

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def to_json(self) -> str:
        obj = {"name": self.name, "split_tag": self.split_tag, "tasks": [t.to_json_obj() for t in self.tasks]}
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TaskSet":
        obj = json.loads(text)
        return cls(obj["name"], obj["split_tag"], [Task.from_json_obj(t) for t in obj["tasks"]])

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "TaskSet":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _problems(rng: np.random.Generator, functions, n: int, dims) -> list[dict]:
    """Distinct functions first (coverage), then a random dimension for each."""
    functions = list(functions)
    fns = [functions[int(k)] for k in rng.permutation(len(functions))[:n]]
    while len(fns) < n:
        fns.append(functions[int(rng.integers(0, len(functions)))])
    out = []
    for f in fns:
        d = int(dims[int(rng.integers(0, len(dims)))])
        out.append({"fn_id": f, "dim": d, "seed": int(rng.integers(0, 2**31 - 1))})
    return sorted(out, key=lambda p: (p["fn_id"], p["dim"], p["seed"]))


def _structures(rng: np.random.Generator, space: str, n: int, exclude=()) -> list[AlgorithmStructure]:
    seen = {s.flat for s in exclude}
    out = []
    while len(out) < n:
        s = generate(space, rng)
        if s.flat not in seen:
            seen.add(s.flat)
            out.append(s)
    return out


def _cross(name: str, split: str, structures, problems) -> TaskSet:
    tasks = []
    for i, s in enumerate(structures):
        for j, p in enumerate(problems):
            tasks.append(Task(f"{name}-s{i:02d}-p{j:02d}", s, p))
    return TaskSet(name, split, tasks)


def build_task_sets(
    seed: int = 0,
    *,
    n_train_structures: int = 8,
    n_train_problems: int = 4,
    n_test_structures: int = 8,
    n_test_problems: int = 8,
    dims=DEFAULT_DIMS,
) -> dict[str, TaskSet]:
    """Deterministic desk-scale splits.

    ``test_in`` uses fresh DE structures on fresh training-function
    instances, ``test_out_problem`` pairs the same structures with the
    held-out functions, and ``test_out_algorithm`` uses PSO/GA structures.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A5C]))
    train_s = _structures(rng, "DE", n_train_structures)
    train_p = _problems(rng, TRAIN_FUNCTIONS, n_train_problems, dims)
    test_s = _structures(rng, "DE", n_test_structures, exclude=train_s)
    test_p = _problems(rng, TRAIN_FUNCTIONS, n_test_problems, dims)
    held_p = _problems(rng, HELDOUT_FUNCTIONS, len(HELDOUT_FUNCTIONS), dims)
    pso_s = _structures(rng, "PSO_GA", n_test_structures)
    return {
        "train": _cross("train", "train", train_s, train_p),
        "test_in": _cross("test_in", "test_in", test_s, test_p),
        "test_out_problem": _cross("test_out_problem", "test_out_problem", test_s, held_p),
        "test_out_algorithm": _cross("test_out_algorithm", "test_out_algorithm", pso_s, test_p),
    }


# ---------------------------------------------------------------- baselines


def run_seed(seed: int, task_index: int, run: int) -> np.random.SeedSequence:
    """Common random numbers: every baseline sees the same env stream per (task, run)."""
    return np.random.SeedSequence([int(seed), int(task_index), int(run)])


def _controller_rng(seed: int, task_index: int, run: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(task_index), int(run), 1]))


def run_baseline(
    baseline: str,
    task_set,
    runs: int = DEFAULT_RUNS,
    H: int = E.DEFAULT_H,
    *,
    policy=None,
    seed: int = 0,
    workers: int = 1,
    progress=None,
) -> np.ndarray:
    """Best-so-far curves ``[n_tasks, runs, H + 1]`` for one baseline.

    ``configx`` needs ``policy`` and acts with its mean action; ``random``
    draws fresh uniform raw actions every step; ``original`` runs every
    module at its defaults.
    """
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline {baseline!r}; choose from {BASELINES}")
    if baseline == "configx" and policy is None:
        raise ValueError("the configx baseline needs a policy checkpoint")
    tasks = list(task_set)
    jobs = [(i, g) for i in range(len(tasks)) for g in range(runs)]
    curves = np.zeros((len(tasks), runs, H + 1))
    chunk = 64
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for start in range(0, len(jobs), chunk):
            part = jobs[start : start + chunk]
            out = _lockstep(baseline, [tasks[i] for i, _ in part], part, H, policy, seed, pool)
            for (i, g), c in zip(part, out):
                curves[i, g] = c
            if progress is not None:
                progress(f"{baseline}: {min(start + chunk, len(jobs))}/{len(jobs)} episodes")
    finally:
        if pool is not None:
            pool.shutdown()
    return curves


def _lockstep(baseline, tasks, ids, H, policy, seed, pool) -> list[np.ndarray]:
    states, obs = [], []
    for task, (i, g) in zip(tasks, ids):
        st, ob = E.reset(task.structure, task.instance(), H=H, rng=run_seed(seed, i, g))
        states.append(st)
        obs.append(ob)
    ctrl = [_controller_rng(seed, i, g) for i, g in ids]
    curves = [[st.f_best] for st in states]
    for _ in range(H):
        if baseline == "configx":
            import torch

            from .policy import batch_tokens

            with torch.no_grad():
                actions, *_ = policy.act(batch_tokens(obs), mode="mean")
            configs = list(actions.double().numpy())
        elif baseline == "random":
            configs = [E.random_raw_actions(r) for r in ctrl]
        else:
            configs = [None] * len(states)

        def advance(k):
            st = states[k]
            if st.done:
                return obs[k]
            _, ob, _, _ = E.step(st, configs[k])
            return ob

        obs = list(pool.map(advance, range(len(states)))) if pool else [advance(k) for k in range(len(states))]
        for k, st in enumerate(states):
            curves[k].append(st.f_best)
    return [np.asarray(c) for c in curves]


# ------------------------------------------------------------------ metric


@dataclass
class MetricTable:
    task_set: str
    task_ids: list
    obj_min: np.ndarray
    obj_max: np.ndarray
    runs: int
    obj: dict = field(default_factory=dict)  # baseline -> (H+1,) mean normalised objective
    final_runs: dict = field(default_factory=dict)  # baseline -> (runs,) final performance per run
    clamp_count: int = 0
    degenerate: list = field(default_factory=list)

    def performance(self, baseline: str) -> np.ndarray:
        return 1.0 - self.obj[baseline]

    def final(self, baseline: str) -> float:
        return float(self.performance(baseline)[-1])

    def summary(self, baseline: str) -> tuple[float, float]:
        r = self.final_runs[baseline]
        return float(np.mean(r)), float(np.std(r))


def bounds_from_curves(curves: dict) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([np.asarray(c) for c in curves.values()], axis=1)
    return stacked[:, :, -1].min(axis=1), stacked[:, :, 0].max(axis=1)


def normalized_metric(curves: dict, *, task_set: str = "", task_ids=None, bounds=None) -> MetricTable:
    """Min-max normalise ``{baseline: [n_tasks, runs, H+1]}`` curves.

    ``bounds`` (a ``(obj_min, obj_max)`` pair or a ``{task_id: [min, max]}``
    mapping) freezes the normalisation; values then falling outside
    ``[0, 1]`` are clamped and counted.
    """
    first = next(iter(curves.values()))
    n_tasks, runs = first.shape[0], first.shape[1]
    task_ids = list(task_ids) if task_ids is not None else [str(i) for i in range(n_tasks)]
    if bounds is None:
        lo, hi = bounds_from_curves(curves)
    elif isinstance(bounds, dict):
        lo = np.array([bounds[t][0] for t in task_ids], dtype=float)
        hi = np.array([bounds[t][1] for t in task_ids], dtype=float)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    span = hi - lo
    degenerate = [task_ids[i] for i in range(n_tasks) if not span[i] > 0]
    table = MetricTable(task_set, task_ids, lo, hi, runs, degenerate=degenerate)
    safe = np.where(span > 0, span, 1.0)[:, None, None]
    for name, c in curves.items():
        c = np.asarray(c, dtype=float)
        z = (c - lo[:, None, None]) / safe
        z[span <= 0] = 0.0
        out = (z < -1e-12) | (z > 1 + 1e-12)
        table.clamp_count += int(out.sum())
        z = np.clip(z, 0.0, 1.0)
        table.obj[name] = z.mean(axis=(0, 1))
        table.final_runs[name] = 1.0 - z[:, :, -1].mean(axis=0)
    return table


def save_bounds(table: MetricTable, path) -> Path:
    obj = {t: [float(a), float(b)] for t, a, b in zip(table.task_ids, table.obj_min, table.obj_max)}
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_bounds(path) -> dict:
    return {k: (float(v[0]), float(v[1])) for k, v in json.loads(Path(path).read_text(encoding="utf-8")).items()}


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def report(tables, out_dir) -> list[Path]:
    """Write per-step performance CSVs and one summary CSV; returns the paths."""
    if isinstance(tables, MetricTable):
        tables = [tables]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    summary_rows = []
    for table in tables:
        for name in table.obj:
            p = out / f"performance_{table.task_set}_{name}.csv"
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step", "performance"])
                for t, v in enumerate(table.performance(name)):
                    w.writerow([t, _fmt(v)])
            paths.append(p)
            mean, std = table.summary(name)
            summary_rows.append(
                [table.task_set, name, _fmt(mean), _fmt(std), f"{mean:.3f} ± {std:.3f}", table.runs, table.clamp_count]
            )
    p = out / "summary.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_set", "baseline", "mean_final_performance", "std_over_runs", "cell", "runs", "clamp_events"])
        w.writerows(summary_rows)
    paths.append(p)
    return paths


def evaluate_task_set(task_set: TaskSet, baselines=BASELINES, *, policy=None, runs=DEFAULT_RUNS, H=E.DEFAULT_H, seed=0, bounds=None, workers=1, progress=None) -> tuple[MetricTable, dict]:
    """Run the requested baselines and compute the metric in one call."""
    curves = {}
    for b in baselines:
        if b == "configx" and policy is None:
            continue
        curves[b] = run_baseline(b, task_set, runs, H, policy=policy, seed=seed, workers=workers, progress=progress)
    table = normalized_metric(curves, task_set=task_set.name, task_ids=[t.task_id for t in task_set], bounds=bounds)
    return table, curves

