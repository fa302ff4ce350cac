"""Command-line entry point (``modular-dac``).

Every invocation writes one ``manifest.json`` describing the resolved
configuration and the files produced.  Progress goes to standard error.
Exit codes: 0 success, 1 validation failure, 2 usage error or fault.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .registry import CATEGORIES, REGISTRY

OUTPUT_ROOT_ENV = "MODULAR_DAC_OUTPUT_ROOT"
MANIFEST_NAME = "manifest.json"
EXIT_OK, EXIT_INVALID, EXIT_FAULT = 0, 1, 2
SPACES = {"de": "DE", "pso_ga": "PSO_GA", "all": "ALL"}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _default_out(command: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    return output_root() / f"{command}-{stamp}"


def write_manifest(out_dir: Path, command: str, config: dict, seed, artifacts) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "registry_hash": REGISTRY.digest,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "artifacts": sorted(str(a) for a in artifacts),
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _jsonable(ns: argparse.Namespace) -> dict:
    out = {}
    for k, v in vars(ns).items():
        if k == "func":
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


# ---------------------------------------------------------------- commands


def cmd_list_modules(args) -> int:
    specs = list(REGISTRY)
    if args.category:
        specs = [s for s in specs if s.category.lower() == args.category.lower()]
        if not specs:
            _log(f"unknown category {args.category!r}; known: {', '.join(CATEGORIES)}")
            return EXIT_FAULT
    for s in specs:
        print(s.summary())
    out = args.out or _default_out("list-modules")
    artifacts = []
    if args.json:
        Path(args.json).write_text(REGISTRY.to_json() + "\n", encoding="utf-8")
        artifacts.append(args.json)
    write_manifest(Path(out), "list-modules", _jsonable(args), None, artifacts)
    return EXIT_OK


def cmd_generate(args) -> int:
    from .structure import generate, serialize

    out = Path(args.out or _default_out("generate"))
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    space = SPACES[args.space]
    paths = []
    for i in range(args.count):
        s = generate(space, rng)
        p = out / f"structure_{i:04d}.json"
        p.write_text(serialize(s), encoding="utf-8")
        paths.append(p)
    _log(f"wrote {len(paths)} structure(s) to {out}")
    write_manifest(out, "generate", _jsonable(args), args.seed, paths)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .structure import StructureError, parse, validate

    out = Path(args.out or _default_out("validate"))
    status = EXIT_OK
    for f in args.files:
        try:
            v = validate(parse(Path(f).read_text(encoding="utf-8")))
        except (OSError, StructureError) as exc:
            print(f"{f}: INVALID: {exc}")
            status = EXIT_INVALID
            continue
        if v is None:
            print(f"{f}: ok")
        else:
            print(f"{f}: INVALID at {v}")
            status = EXIT_INVALID
    write_manifest(out, "validate", _jsonable(args), None, [])
    return status


def _train_config(args):
    from .trainer import TrainConfig, read_kv_file

    values = read_kv_file(args.config) if args.config else {}
    for key in ("epochs", "lr", "batch_size", "nstep", "kappa", "H", "seed", "ablation", "workers", "ent_coef", "clip_eps"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    values.setdefault("workers", os.cpu_count() or 1)
    return TrainConfig.from_mapping(values)


def _task_set(name_or_file: str, task_seed: int):
    from .evaluation import SPLITS, TaskSet, build_task_sets

    if name_or_file in SPLITS:
        return build_task_sets(task_seed)[name_or_file]
    return TaskSet.load(name_or_file)


def cmd_train(args) -> int:
    import dataclasses

    from .trainer import train

    cfg = _train_config(args)
    out = Path(args.out or _default_out("train"))
    tasks = _task_set(args.task_set, args.task_seed)
    out.mkdir(parents=True, exist_ok=True)
    tasks_path = tasks.save(out / f"tasks_{tasks.name}.json")
    res = train(tasks.tasks, cfg, out, resume=args.resume, progress=_log)
    conf = {**_jsonable(args), "train_config": dataclasses.asdict(cfg)}
    write_manifest(out, "train", conf, cfg.seed, [res.checkpoint, res.log_path, tasks_path])
    return EXIT_OK


def cmd_finetune(args) -> int:
    import dataclasses

    from .trainer import finetune

    cfg = _train_config(args)
    out = Path(args.out or _default_out("finetune"))
    tasks = _task_set(args.task_set, args.task_seed)
    out.mkdir(parents=True, exist_ok=True)
    tasks_path = tasks.save(out / f"tasks_{tasks.name}.json")
    res = finetune(args.checkpoint, tasks.tasks, cfg, out, progress=_log)
    conf = {**_jsonable(args), "train_config": dataclasses.asdict(cfg)}
    write_manifest(out, "finetune", conf, cfg.seed, [res.checkpoint, res.log_path, tasks_path])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_task_set, load_bounds, report, save_bounds
    from .policy import load_checkpoint

    out = Path(args.out or _default_out("evaluate"))
    out.mkdir(parents=True, exist_ok=True)
    tasks = _task_set(args.task_set, args.task_seed)
    policy = None
    if args.checkpoint:
        policy, _ = load_checkpoint(args.checkpoint)
    baselines = [b.strip() for b in args.baselines.split(",") if b.strip()]
    if "configx" in baselines and policy is None:
        _log("the configx baseline needs --checkpoint")
        return EXIT_FAULT
    bounds = load_bounds(args.bounds) if args.bounds else None
    table, curves = evaluate_task_set(
        tasks,
        baselines,
        policy=policy,
        runs=args.runs,
        H=args.H,
        seed=args.seed,
        bounds=bounds,
        workers=args.workers or os.cpu_count() or 1,
        progress=_log,
    )
    paths = report(table, out)
    curve_path = out / "curves.npz"
    np.savez_compressed(curve_path, task_ids=np.array(table.task_ids), **curves)
    paths.append(curve_path)
    if bounds is None:
        paths.append(save_bounds(table, out / "bounds.json"))
    for b in table.obj:
        mean, std = table.summary(b)
        _log(f"{tasks.name} {b}: final performance {mean:.4f} ± {std:.4f}")
    if table.clamp_count:
        _log(f"{table.clamp_count} normalised values clamped into [0, 1]")
    write_manifest(out, "evaluate", _jsonable(args), args.seed, paths)
    return EXIT_OK


def cmd_inspect_run(args) -> int:
    run = Path(args.run_dir)
    mpath = run / MANIFEST_NAME
    if not mpath.exists():
        _log(f"no {MANIFEST_NAME} in {run}")
        return EXIT_FAULT
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    print(f"command:   {manifest['command']}")
    print(f"seed:      {manifest['seed']}")
    print(f"timestamp: {manifest['timestamp']}")
    print(f"registry:  {manifest['registry_hash']}" + ("" if manifest["registry_hash"] == REGISTRY.digest else "  (differs from current registry)"))
    for a in manifest["artifacts"]:
        print(f"artifact:  {a}")
    log = run / "train_log.csv"
    if log.exists():
        from .trainer import read_log

        rows = read_log(log)
        for r in rows[-args.tail :]:
            print(f"epoch {r['epoch']:>3}  return {r['mean_return']:.4f}  perf {r['mean_final_perf']:.4f}  updates {r['updates']}")
    summary = run / "summary.csv"
    if summary.exists():
        print(summary.read_text(encoding="utf-8").rstrip())
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file with TrainConfig fields; flags override it")
    p.add_argument("--task-set", default="train", help="split name (train, test_in, ...) or a task-set JSON file")
    p.add_argument("--task-seed", type=int, default=0, help="seed used to build the named task splits")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="tasks per batch")
    p.add_argument("--nstep", type=int, help="rollout steps between updates")
    p.add_argument("--kappa", type=int, help="PPO passes per update")
    p.add_argument("--H", type=int, help="optimisation horizon (generations)")
    p.add_argument("--ent-coef", dest="ent_coef", type=float, help="entropy bonus coefficient")
    p.add_argument("--clip-eps", dest="clip_eps", type=float, help="PPO clipping range")
    p.add_argument("--ablation", choices=["full", "npe", "lpe", "mlp"], help="policy architecture variant")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--workers", type=int, help="parallel environment workers (1 = bitwise reproducible)")
    p.add_argument("--out", help="output directory (default: a fresh directory under the output root)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modular-dac",
        description="Generate modular evolutionary algorithms and train/evaluate a learned dynamic configurator.",
        epilog=f"Output root: ${OUTPUT_ROOT_ENV} (default ./runs).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("list-modules", help="list registered sub-module variants")
    p.add_argument("--category", help="only this category (e.g. mutation)")
    p.add_argument("--json", help="also export the registry as JSON to this file")
    p.add_argument("--out", help="directory for the run manifest")
    p.set_defaults(func=cmd_list_modules)

    p = sub.add_parser("generate", help="sample legal algorithm structures")
    p.add_argument("--space", choices=sorted(SPACES), default="de", help="module space")
    p.add_argument("--count", type=int, default=1, help="number of structures")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--out", help="directory for the structure files")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check structure files (exit 1 if any is illegal)")
    p.add_argument("files", nargs="+", help="structure JSON files")
    p.add_argument("--out", help="directory for the run manifest")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train a policy on a task set")
    _add_train_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="continue training a checkpoint on another task set")
    p.add_argument("--checkpoint", required=True, help="checkpoint to start from")
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="run baselines on a task set and compute the normalised metric")
    p.add_argument("--checkpoint", help="policy checkpoint (required for the configx baseline)")
    p.add_argument("--task-set", default="test_in", help="split name or task-set JSON file")
    p.add_argument("--task-seed", type=int, default=0, help="seed used to build the named task splits")
    p.add_argument("--baselines", default="configx,random,original", help="comma-separated baselines")
    p.add_argument("--runs", type=int, default=11, help="independent runs per task")
    p.add_argument("--H", type=int, default=100, help="optimisation horizon (generations)")
    p.add_argument("--bounds", help="frozen bounds file from an earlier evaluation")
    p.add_argument("--seed", type=int, default=0, help="run seed (shared by all baselines)")
    p.add_argument("--workers", type=int, help="parallel environment workers")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-run", help="summarise a run directory")
    p.add_argument("run_dir", help="directory containing manifest.json")
    p.add_argument("--tail", type=int, default=5, help="training-log rows to show")
    p.set_defaults(func=cmd_inspect_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except KeyboardInterrupt:
        _log("interrupted")
        return EXIT_FAULT
    except Exception as exc:  # noqa: BLE001 - top-level fault barrier
        _log(f"error: {exc}")
        if os.environ.get("MODULAR_DAC_DEBUG"):
            traceback.print_exc()
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
