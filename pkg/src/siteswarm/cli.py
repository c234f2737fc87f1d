"""Command-line interface: train, eval, replay, oracle-check."""

from __future__ import annotations

import argparse
import os
import sys

import yaml

from .errors import SiteSwarmError
from .harness import (
    ExperimentConfig,
    evaluate,
    format_trace_record,
    load_checkpoint,
    oracle_check,
    policies_from_learners,
    read_trace,
    run_training,
)

SEED_ENV_VAR = "SITE_SWARM_SEED"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="siteswarm",
        description="Multi-agent PPO for planar construction tasks with IK finishing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop for one task")
    p.add_argument("--task", choices=["reach", "1", "2", "3", "4"], default=None)
    p.add_argument("--config", default=None, help="YAML experiment config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--steps", type=int, default=None, help="override total env steps")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-action-sharing", action="store_true")
    p.add_argument("--checkpoint-interval", type=int, default=None)
    p.add_argument("--trace-iterations", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint with the policy means")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--no-ik", action="store_true", help="skip IK hand-off verification")

    p = sub.add_parser("replay", help="pretty-print a replay trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--limit", type=int, default=50)

    sub.add_parser("oracle-check", help="run the independent numeric cross-checks")
    return parser


def _resolve_seed(args, raw_config: dict | None) -> int | None:
    """Precedence: --seed, then the config file, then SITE_SWARM_SEED."""
    if args.seed is not None:
        return args.seed
    if raw_config and isinstance(raw_config.get("trainer"), dict):
        if "seed" in raw_config["trainer"]:
            return None  # config already carries an explicit seed
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        return int(env_seed)
    return None


def cmd_train(args) -> int:
    raw = None
    if args.config is not None:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh)
        config = ExperimentConfig.from_dict(raw)
        if args.task is not None and args.task != config.task:
            raise SiteSwarmError(
                f"--task {args.task} conflicts with config task {config.task}"
            )
    else:
        if args.task is None:
            raise SiteSwarmError("either --task or --config is required")
        config = ExperimentConfig.for_task(args.task)

    seed = _resolve_seed(args, raw)
    if seed is not None:
        config.trainer.seed = seed
    if args.out is not None:
        config.out_dir = args.out
    if args.steps is not None:
        config.trainer.total_steps = args.steps
    if args.workers is not None:
        config.workers = args.workers
    if args.no_action_sharing:
        config.trainer.action_sharing = False
    if args.checkpoint_interval is not None:
        config.checkpoint_interval = args.checkpoint_interval
    if args.trace_iterations is not None:
        config.trace_iterations = args.trace_iterations
    config.validate()

    def progress(trainer, record):
        if not args.quiet:
            agents = "  ".join(
                f"a{i} ret {a['mean_episode_return']:+.3f}"
                for i, a in enumerate(record.agents)
            )
            print(
                f"iter {record.iteration:>5}/{trainer.total_iterations} "
                f"steps {record.env_steps:>9}  {agents}  "
                f"success {100 * record.success_rate_rolling:5.1f}%  "
                f"cs/ep {record.self_collisions_rolling:.3f}",
                flush=True,
            )

    result = run_training(config, resume_from=args.resume, progress=progress)
    print(f"metrics:    {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    if result.trace_path:
        print(f"trace:      {result.trace_path}")
    return 0


def cmd_eval(args) -> int:
    trainer, config = load_checkpoint(args.checkpoint)
    policies = policies_from_learners(trainer.learners)
    report = evaluate(
        policies,
        config.task,
        episodes=args.episodes,
        seed=args.seed,
        weights=config.weights,
        h_g_mode=config.h_g_mode,
        episode_len=config.trainer.episode_len,
        verify_ik=not args.no_ik,
    )
    print(f"task {report.task}  episodes {report.episodes}")
    for i, (pick, place) in enumerate(zip(report.pick_rate, report.place_rate)):
        print(f"  arm {i}: pick-up {pick:5.1f}%   placement {place:5.1f}%")
    print(f"  full success      {report.success_rate:5.1f}%")
    print(f"  self-collisions   {report.self_collisions_per_episode:.3f} per episode")
    if report.ik_pick_attempts:
        rate = 100.0 * report.ik_pick_successes / report.ik_pick_attempts
        print(
            f"  IK pick finish    {report.ik_pick_successes}/{report.ik_pick_attempts}"
            f" ({rate:.1f}%)"
        )
    if report.ik_place_attempts:
        rate = 100.0 * report.ik_place_successes / report.ik_place_attempts
        print(
            f"  IK place finish   {report.ik_place_successes}/{report.ik_place_attempts}"
            f" ({rate:.1f}%)"
        )
    if report.ik_failures:
        print(f"  IK failures       {report.ik_failures}")
    return 0


def cmd_replay(args) -> int:
    records = read_trace(args.trace)
    for rec in records[: args.limit]:
        print(format_trace_record(rec))
    print(f"({len(records)} records total)")
    return 0


def cmd_oracle_check() -> int:
    ok, lines = oracle_check()
    for line in lines:
        print(line)
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "replay":
            return cmd_replay(args)
        if args.command == "oracle-check":
            return cmd_oracle_check()
    except SiteSwarmError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
