"""Multitask PPO over batches of (structure, problem) tasks.

Each epoch shuffles the training tasks into batches.  A batch runs its
episodes in lockstep; every ``nstep`` generations the collected window is
turned into GAE advantages and the shared policy is updated ``kappa``
times on the full window, after which the window memory is cleared.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import env as E
from .policy import CheckpointError, PolicyArch, PolicyNet, batch_tokens, load_checkpoint, save_checkpoint

LOG_FIELDS = (
    "tag",
    "epoch",
    "updates",
    "transitions",
    "mean_return",
    "mean_final_perf",
    "pg_loss",
    "v_loss",
    "entropy",
    "approx_kl",
    "clip_frac",
)
CHECKPOINT_NAME = "checkpoint.pt"
LOG_NAME = "train_log.csv"


class TrainingError(RuntimeError):
    """Non-finite loss or gradient; the last checkpoint stays intact."""


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 8
    nstep: int = 10
    kappa: int = 3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    max_grad_norm: float = 0.5
    H: int = E.DEFAULT_H
    seed: int = 0
    ablation: str = "full"
    critic_mean: str = "lmax"
    NP_max: int | None = None
    workers: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "nstep", "kappa", "H"):
            v = getattr(self, name)
            if v < (0 if name == "epochs" else 1):
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("lr", "gamma", "gae_lambda", "max_grad_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("clip_eps", "vf_coef", "ent_coef"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def arch(self) -> PolicyArch:
        return PolicyArch.ablation(self.ablation, critic_mean=self.critic_mean)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in mapping.items():
            if key not in types:
                raise ValueError(f"unknown TrainConfig key {key!r}")
            kw[key] = _coerce(raw, types[key])
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_mapping(read_kv_file(path))


def _coerce(raw, typ: str):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if "None" in typ and raw.lower() in ("none", ""):
        return None
    if typ.startswith("int"):
        return int(raw)
    if typ.startswith("float"):
        return float(raw)
    return raw


def read_kv_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


# ----------------------------------------------------------------- memory


@dataclass
class Transition:
    tokens: E.StateTokenSeq
    action: np.ndarray
    log_prob: float
    value: float
    reward: float
    done: bool
    next_tokens: E.StateTokenSeq
    task: int
    t: int


@dataclass
class Memory:
    """One n-step window: per-task ordered transitions plus bootstrap values."""

    per_task: dict = field(default_factory=dict)
    bootstrap: dict = field(default_factory=dict)

    def add(self, tr: Transition) -> None:
        self.per_task.setdefault(tr.task, []).append(tr)

    def __len__(self) -> int:
        return sum(len(v) for v in self.per_task.values())

    def clear(self) -> None:
        self.per_task.clear()
        self.bootstrap.clear()

    def flat(self) -> list[Transition]:
        return [tr for k in sorted(self.per_task) for tr in self.per_task[k]]


def gae(rewards, values, dones, last_value: float, gamma: float, lam: float):
    """Generalised advantage estimates and return targets for one sequence."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    adv = np.zeros(T)
    nxt_v, nxt_a = float(last_value), 0.0
    for t in reversed(range(T)):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * nxt_v * live - values[t]
        nxt_a = delta + gamma * lam * live * nxt_a
        adv[t] = nxt_a
        nxt_v = values[t]
    return adv, adv + values


def advantages(memory: Memory, gamma: float, lam: float, normalize: bool = True):
    """Advantages and returns in ``memory.flat()`` order."""
    advs, rets = [], []
    for k in sorted(memory.per_task):
        seq = memory.per_task[k]
        last = 0.0 if seq[-1].done else memory.bootstrap.get(k, 0.0)
        a, r = gae([t.reward for t in seq], [t.value for t in seq], [t.done for t in seq], last, gamma, lam)
        advs.append(a)
        rets.append(r)
    adv, ret = np.concatenate(advs), np.concatenate(rets)
    if normalize and len(adv) > 1:
        std = adv.std()
        adv = (adv - adv.mean()) / (std + 1e-8) if std > 0 else adv - adv.mean()
    return adv, ret


def surrogate(ratio: torch.Tensor, adv: torch.Tensor, eps: float) -> torch.Tensor:
    """Clipped PPO objective per sample; clipped branches carry no ratio gradient."""
    inside = (ratio > 1.0 - eps) & (ratio < 1.0 + eps)
    clipped = torch.where(inside, ratio, ratio.detach().clamp(1.0 - eps, 1.0 + eps)) * adv
    unclipped = ratio * adv
    return torch.where(unclipped < clipped, unclipped, clipped)


def ppo_update(memory: Memory, policy: PolicyNet, optimizer, cfg: TrainConfig, normalize: bool = True) -> dict:
    """``kappa`` full-batch clipped-surrogate passes; returns averaged statistics."""
    if len(memory) == 0:
        raise ValueError("ppo_update needs a non-empty memory")
    trs = memory.flat()
    adv_np, ret_np = advantages(memory, cfg.gamma, cfg.gae_lambda, normalize)
    dtype = next(policy.parameters()).dtype
    batch = batch_tokens([t.tokens for t in trs], dtype=dtype)
    actions = torch.as_tensor(np.stack([t.action for t in trs]), dtype=dtype)
    # log-probs stored at collection time, never recomputed
    old_lp = torch.as_tensor([t.log_prob for t in trs], dtype=dtype)
    adv = torch.as_tensor(adv_np, dtype=dtype)
    ret = torch.as_tensor(ret_np, dtype=dtype)
    stats = {"pg_loss": 0.0, "v_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_frac": 0.0}
    for _ in range(cfg.kappa):
        new_lp, ent, v = policy.evaluate_actions(batch, actions)
        log_ratio = new_lp - old_lp
        ratio = torch.exp(log_ratio)
        pg = -surrogate(ratio, adv, cfg.clip_eps).mean()
        v_loss = torch.mean((v - ret) ** 2)
        ent_m = ent.mean()
        loss = pg + cfg.vf_coef * v_loss - cfg.ent_coef * ent_m
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss.item()}")
        optimizer.zero_grad()
        loss.backward()
        for name, p in policy.named_parameters():
            if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in {name}")
        torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
        optimizer.step()
        with torch.no_grad():
            stats["pg_loss"] += pg.item() / cfg.kappa
            stats["v_loss"] += v_loss.item() / cfg.kappa
            stats["entropy"] += ent_m.item() / cfg.kappa
            stats["approx_kl"] += ((ratio - 1) - log_ratio).mean().item() / cfg.kappa
            stats["clip_frac"] += ((ratio - 1).abs() > cfg.clip_eps).double().mean().item() / cfg.kappa
    return stats


# ---------------------------------------------------------------- rollout


class _Batch:
    """Lockstep episodes of one task batch."""

    def __init__(self, tasks, task_ids, cfg: TrainConfig, epoch: int, pool):
        self.cfg, self.pool = cfg, pool
        self.ids = list(task_ids)
        self.states, self.obs = [], []
        for task, i in zip(tasks, task_ids):
            seed = np.random.SeedSequence([cfg.seed, epoch, i])
            st, ob = E.reset(task.structure, task.instance(), cfg.NP_max, cfg.H, seed)
            self.states.append(st)
            self.obs.append(ob)
        self.returns = np.zeros(len(tasks))

    @property
    def done(self) -> bool:
        return all(st.done for st in self.states)


def rollout(batch: _Batch, policy: PolicyNet, nstep: int, generator: torch.Generator) -> Memory:
    """Advance every live task by up to ``nstep`` generations."""
    memory = Memory()
    dtype = next(policy.parameters()).dtype
    for _ in range(nstep):
        live = [k for k, st in enumerate(batch.states) if not st.done]
        if not live:
            break
        tb = batch_tokens([batch.obs[k] for k in live], dtype=dtype)
        actions, logp, _, values = policy.act(tb, "sample", generator)
        acts = actions.double().numpy()

        def advance(j):
            k = live[j]
            _, ob, r, d = E.step(batch.states[k], acts[j])
            return ob, r, d

        results = list(batch.pool.map(advance, range(len(live)))) if batch.pool else [advance(j) for j in range(len(live))]
        for j, (ob, r, d) in enumerate(results):
            k = live[j]
            memory.add(
                Transition(batch.obs[k], acts[j], float(logp[j]), float(values[j]), float(r), bool(d), ob, batch.ids[k], batch.states[k].t)
            )
            batch.obs[k] = ob
            batch.returns[k] += r
    pending = [k for k, st in enumerate(batch.states) if not st.done and batch.ids[k] in memory.per_task]
    if pending:
        with torch.no_grad():
            _, _, v = policy(**{k: v for k, v in batch_tokens([batch.obs[k] for k in pending], dtype=dtype).items() if k != "act_mask"})
        for j, k in enumerate(pending):
            memory.bootstrap[batch.ids[k]] = float(v[j])
    return memory


def final_performance(state: E.TaskState) -> float:
    denom = state.f_best_0 - state.instance.f_star
    if not denom > 0:
        return 1.0
    return 1.0 - (state.f_best - state.instance.f_star) / denom


# ------------------------------------------------------------------- loop


@dataclass
class TrainResult:
    policy: PolicyNet
    log: list
    checkpoint: Path | None
    log_path: Path | None


def _epoch_generator(seed: int, epoch: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(np.random.SeedSequence([seed, epoch, 7]).generate_state(1)[0]))


def _run_epochs(
    policy: PolicyNet,
    optimizer,
    tasks,
    cfg: TrainConfig,
    *,
    start_epoch: int,
    tag: str,
    out_dir: Path | None,
    log: list,
    updates: int,
    on_epoch: Callable | None,
    progress: Callable | None,
) -> TrainResult:
    tasks = list(tasks)
    if not tasks:
        raise ValueError("training needs at least one task")
    ckpt = out_dir / CHECKPOINT_NAME if out_dir else None
    log_path = out_dir / LOG_NAME if out_dir else None
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        if ckpt is not None and start_epoch >= cfg.epochs and not ckpt.exists():
            save_checkpoint(ckpt, policy, optimizer=optimizer, step=updates, extra={"epoch": start_epoch, "log": log, "config": dataclasses.asdict(cfg), "tag": tag})
        for epoch in range(start_epoch, cfg.epochs):
            order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 3])).permutation(len(tasks))
            gen = _epoch_generator(cfg.seed, epoch)
            rets, perfs, stats_acc, n_tr = [], [], [], 0
            for b0 in range(0, len(order), cfg.batch_size):
                ids = [int(i) for i in order[b0 : b0 + cfg.batch_size]]
                batch = _Batch([tasks[i] for i in ids], ids, cfg, epoch, pool)
                while not batch.done:
                    memory = rollout(batch, policy, cfg.nstep, gen)
                    n_tr += len(memory)
                    stats_acc.append(ppo_update(memory, policy, optimizer, cfg))
                    updates += cfg.kappa
                    memory.clear()
                rets.extend(batch.returns.tolist())
                perfs.extend(final_performance(st) for st in batch.states)
            row = {
                "tag": tag,
                "epoch": epoch + 1,
                "updates": updates,
                "transitions": n_tr,
                "mean_return": float(np.mean(rets)),
                "mean_final_perf": float(np.mean(perfs)),
            }
            for key in ("pg_loss", "v_loss", "entropy", "approx_kl", "clip_frac"):
                row[key] = float(np.mean([s[key] for s in stats_acc]))
            log.append(row)
            if out_dir is not None:
                write_log(log_path, log)
                save_checkpoint(
                    ckpt,
                    policy,
                    optimizer=optimizer,
                    step=updates,
                    extra={"epoch": epoch + 1, "log": log, "config": dataclasses.asdict(cfg), "tag": tag},
                )
            if progress is not None:
                progress(f"[{tag}] epoch {epoch + 1}/{cfg.epochs} return={row['mean_return']:.4f} perf={row['mean_final_perf']:.4f}")
            if on_epoch is not None:
                on_epoch(epoch + 1, policy, row)
    finally:
        if pool is not None:
            pool.shutdown()
    if log_path is not None and not log_path.exists():
        write_log(log_path, log)
    return TrainResult(policy, log, ckpt, log_path)


def _optimizer(policy: PolicyNet, cfg: TrainConfig):
    return torch.optim.Adam(policy.parameters(), lr=cfg.lr)


def train(
    tasks,
    cfg: TrainConfig | None = None,
    out_dir=None,
    *,
    resume: bool = False,
    on_epoch: Callable | None = None,
    progress: Callable | None = None,
) -> TrainResult:
    """Train a fresh policy (or resume from ``out_dir``'s checkpoint)."""
    cfg = cfg or TrainConfig()
    torch.manual_seed(cfg.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    policy = PolicyNet(cfg.arch(), seed=cfg.seed)
    optimizer = _optimizer(policy, cfg)
    start, log, updates = 0, [], 0
    if resume and out_dir is not None and (out_dir / CHECKPOINT_NAME).exists():
        policy, blob = load_checkpoint(out_dir / CHECKPOINT_NAME, cfg.arch())
        optimizer = _optimizer(policy, cfg)
        if blob.get("optimizer"):
            optimizer.load_state_dict(blob["optimizer"])
        start = int(blob["extra"].get("epoch", 0))
        log = list(blob["extra"].get("log", []))
        updates = int(blob.get("step", 0))
    return _run_epochs(policy, optimizer, tasks, cfg, start_epoch=start, tag="train", out_dir=out_dir, log=log, updates=updates, on_epoch=on_epoch, progress=progress)


def finetune(
    checkpoint,
    tasks,
    cfg: TrainConfig | None = None,
    out_dir=None,
    *,
    on_epoch: Callable | None = None,
    progress: Callable | None = None,
) -> TrainResult:
    """Continue training a checkpoint on new tasks; the log is tagged ``finetune``."""
    cfg = cfg or TrainConfig()
    policy, blob = load_checkpoint(checkpoint, cfg.arch())
    optimizer = _optimizer(policy, cfg)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if (out_dir / CHECKPOINT_NAME).resolve() == Path(checkpoint).resolve():
            raise CheckpointError("finetune output would overwrite its input checkpoint")
    return _run_epochs(policy, optimizer, tasks, cfg, start_epoch=0, tag="finetune", out_dir=out_dir, log=[], updates=0, on_epoch=on_epoch, progress=progress)


def write_log(path, rows: list) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (format(v, ".10g") if isinstance(v, float) else v) for k, v in row.items()})
    return path


def read_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in LOG_FIELDS[1:]:
            r[k] = float(r[k]) if k not in ("epoch", "updates", "transitions") else int(r[k])
    return rows


def epochs_to_reach(returns, threshold: float) -> int | None:
    """First 1-based epoch whose return reaches ``threshold``."""
    for i, r in enumerate(returns, start=1):
        if r >= threshold - 1e-12:
            return i
    return None


def updates_per_epoch(n_tasks: int, cfg: TrainConfig) -> int:
    return math.ceil(cfg.H / cfg.nstep) * cfg.kappa * math.ceil(n_tasks / cfg.batch_size)
