"""Command-line entry point: ``mcql <command> [options]``.

Every command accepts ``--config`` (INI file or preset name), ``--seed`` and
``--out``. Files written under ``--out``:

``gen-data``    dataset directory (``metadata.json`` + ``transitions.jsonl``),
                or ``task_<i>/`` subdirectories with ``--tasks``
``train``       ``metrics.csv`` per epoch, ``weights/agent<u>.npz``, ``config.ini``
``meta-train``  ``metrics.csv`` per meta-epoch, ``weights/``, ``config.ini``
``adapt``       ``metrics.csv`` (before/after, or per epoch with ``--epochs``), ``weights/``
``eval``        ``metrics.csv`` per episode
``baseline``    ``metrics.csv`` per episode
``recipe``      one subdirectory per run plus ``summary.csv``
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config as configlib
from . import data, evaluation, meta, qnet, recipes, trainers
from .env import TaskSpec
from .policies import deterministic_policies, greedy_policies, random_policy
from .validation import check_params

logger = logging.getLogger("mcql")


class UsageError(ValueError):
    pass


def _globals(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="INI config file or preset name (default: desk)")
    parser.add_argument("--seed", type=int, default=default, help="seed for data, training and evaluation")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--format", choices=("csv", "json-lines"), default=default, help="metrics file format")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcql", description="Meta offline multi-agent CQL for UAV data collection.")
    _globals(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="record an offline dataset with an online DQN")
    p.add_argument("--size", type=int, help="entries kept per agent (online steps = 10 x size)")
    p.add_argument("--lam", type=float, help="lambda of the single task (default: [task] lam)")
    p.add_argument("--tasks", type=int, help="record one dataset per sampled lambda into task_<i>/")

    p = sub.add_parser("train", parents=[common], help="offline training on one dataset")
    p.add_argument("--algo", choices=("i-dqn", "ctde-dqn", "i-cql", "ctde-cql"))
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("meta-train", parents=[common], help="meta-train initial weights over task datasets")
    p.add_argument("--variant", choices=tuple(meta.VARIANTS))
    p.add_argument("--tasks", type=int, help="use the first N task_<i> datasets (default: all)")
    p.add_argument("--data", required=True, help="directory of task_<i> datasets")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("adapt", parents=[common], help="adapt meta-learned weights to a new task")
    p.add_argument("--init", required=True, help="weights directory")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=1, help="inner-rate SGD steps")
    p.add_argument("--epochs", type=int, help="instead of --steps, Adam fine-tuning epochs with [train] settings")

    p = sub.add_parser("eval", parents=[common], help="greedy rollouts of trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--lam", type=float)

    p = sub.add_parser("baseline", parents=[common], help="random-walk or deterministic-path rollouts")
    p.add_argument("--policy", choices=("rw", "det"), required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--lam", type=float)

    sub.add_parser("recipe", parents=[common], help="run the [recipe] section of the config")
    return parser


def _out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} needs --out")
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> configlib.Config:
    cfg = configlib.load(args.config or "desk")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.format:
        cfg = replace(cfg, eval=replace(cfg.eval, format=args.format))
    return cfg


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else cfg.train.seed


def _metrics_name(cfg) -> str:
    return "metrics.csv" if cfg.eval.format == "csv" else "metrics.jsonl"


def save_weights(params_list, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for u, p in enumerate(params_list):
        qnet.save(p, directory / f"agent{u}.npz")
    return directory


def load_weights(directory) -> list[qnet.NetParams]:
    directory = Path(directory)
    files = sorted(directory.glob("agent*.npz"), key=lambda f: int(f.stem[5:]))
    if not files:
        raise FileNotFoundError(f"no agent<u>.npz checkpoints in {directory}")
    return [qnet.load(f) for f in files]


def _write_config(cfg, out: Path):
    (out / "config.ini").write_text(configlib.dump(cfg))


def cmd_gen_data(args, cfg):
    out = _out(args)
    size = args.size or cfg.data.size
    seed = _seed(args, cfg)
    steps = round(size / data.RETAIN_FRACTION)
    if args.tasks:
        cfg = replace(cfg, data=replace(cfg.data, tasks=args.tasks))
        specs = recipes.task_specs(cfg)
        for i, task in enumerate(specs):
            bundle = data.generate_offline_dataset(cfg.env, task, steps, seed * 1000 + i, cfg.behavior,
                                                   cfg.data.capacity)
            data.save(bundle, out / f"task_{i}")
            logger.info("task_%d lambda=%.6g: %d entries per agent", i, task.lam, bundle.size)
    else:
        task = TaskSpec(args.lam if args.lam is not None else cfg.task.lam, cfg.task.layout_seed)
        bundle = data.generate_offline_dataset(cfg.env, task, steps, seed, cfg.behavior, cfg.data.capacity)
        data.save(bundle, out)
        logger.info("wrote %d entries per agent to %s", bundle.size, out)


def cmd_train(args, cfg):
    out = _out(args)
    bundle = data.load(args.data)
    tc = cfg.train
    tc = replace(tc, algo=args.algo or tc.algo, epochs=args.epochs if args.epochs is not None else tc.epochs)
    cfg = replace(cfg, train=tc, env=bundle.cfg, task=bundle.task)
    params, history = trainers.train_offline(
        bundle, tc, callback=lambda e, _, rec: logger.info(evaluation.format_console(rec)))
    evaluation.emit(history, out / _metrics_name(cfg), cfg.eval.format, index_name="epoch")
    save_weights(params, out / "weights")
    _write_config(cfg, out)


def _task_dirs(root: Path, n: int | None) -> list[Path]:
    dirs = sorted((p for p in root.glob("task_*") if p.is_dir()), key=lambda p: int(p.name[5:]))
    if not dirs:
        raise UsageError(f"no task_<i> datasets under {root}")
    if n is not None:
        if not 1 <= n <= len(dirs):
            raise UsageError(f"--tasks {n} but {root} holds {len(dirs)} task datasets")
        dirs = dirs[:n]
    return dirs


def cmd_meta_train(args, cfg):
    out = _out(args)
    bundles = [data.load(p) for p in _task_dirs(Path(args.data), args.tasks)]
    mc = cfg.meta
    mc = replace(mc, variant=args.variant or mc.variant, epochs=args.epochs if args.epochs is not None else mc.epochs)
    cfg = replace(cfg, meta=mc, env=bundles[0].cfg)
    params, history = meta.meta_train(
        bundles, mc, callback=lambda e, _, rec: logger.info("meta-epoch %d loss=%.6g", e, rec.loss))
    evaluation.emit(history, out / _metrics_name(cfg), cfg.eval.format, index_name="epoch")
    save_weights(params, out / "weights")
    _write_config(cfg, out)


def cmd_adapt(args, cfg):
    out = _out(args)
    bundle = data.load(args.data)
    init = load_weights(args.init)
    check_params(init, bundle.cfg)
    cfg = replace(cfg, env=bundle.cfg, task=bundle.task)
    if args.epochs is not None:
        params, history = meta.finetune(init, bundle, replace(cfg.train, epochs=args.epochs))
        index = "epoch"
    else:
        if args.steps < 0:
            raise UsageError(f"--steps must be >= 0, got {args.steps}")
        episodes = max(cfg.train.eval_episodes, 1)
        params, before, after = meta.adapt(init, bundle, args.steps, cfg.meta, episodes)
        history, index = [before, after], "step"
    for rec in history:
        logger.info(evaluation.format_console(rec))
    evaluation.emit(history, out / _metrics_name(cfg), cfg.eval.format, index_name=index)
    save_weights(params, out / "weights")
    _write_config(cfg, out)


def _rollout_task(args, cfg) -> TaskSpec:
    return TaskSpec(args.lam if args.lam is not None else cfg.task.lam, cfg.task.layout_seed)


def _emit_episodes(records, args, cfg):
    out = _out(args)
    evaluation.emit(records, out / _metrics_name(cfg), cfg.eval.format, index_name="episode")
    mean = evaluation.aggregate(records)
    logger.info("mean over %d episodes: %s", len(records), evaluation.format_console(mean))


def cmd_eval(args, cfg):
    params = load_weights(args.weights)
    check_params(params, cfg.env)
    episodes = args.episodes or cfg.eval.episodes
    records = evaluation.rollout(greedy_policies(params), cfg.env, _rollout_task(args, cfg), episodes,
                                 _seed(args, cfg), "greedy")
    _emit_episodes(records, args, cfg)


def cmd_baseline(args, cfg):
    task = _rollout_task(args, cfg)
    episodes = args.episodes or cfg.eval.episodes
    policies = [random_policy()] * cfg.env.U if args.policy == "rw" else deterministic_policies(cfg.env, task)
    records = evaluation.rollout(policies, cfg.env, task, episodes, _seed(args, cfg), args.policy)
    _emit_episodes(records, args, cfg)


def cmd_recipe(args, cfg):
    if not cfg.recipe:
        raise UsageError("config has no [recipe] section; try --config fig2-ctde")
    recipes.run(cfg, _out(args), seeds=[args.seed] if args.seed is not None else None)


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "meta-train": cmd_meta_train, "adapt": cmd_adapt,
    "eval": cmd_eval, "baseline": cmd_baseline, "recipe": cmd_recipe,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](args, cfg)
    except (ValueError, FileNotFoundError, OSError, FloatingPointError) as exc:
        print(f"mcql {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
