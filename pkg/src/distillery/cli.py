"""Command-line pipeline driver.

Subcommands map one-to-one onto the pipeline phases: `train-teacher`,
`collect`, `distill`, `finetune`, `evaluate`, `sweep-epochs`, and `report`.
Every command is deterministic given its inputs and `--seed`; reruns
produce byte-identical output files. Exit codes: 0 success, 1 usage error,
2 config error, 3 numeric fault, 4 I/O or file-format error.

Set ``DISTILLERY_LOG={error|info|debug}`` to control log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import distill as distill_mod
from . import rng as streams
from .config import (
    ExperimentConfig,
    config_hash,
    default_config,
    hash_of_mapping,
    load_config,
)
from .envs import EnvSpec, build_env
from .errors import ConfigError, DistilleryError, UsageError
from .evaluation import ScoreCell, comparison_report, evaluate
from .nets import CapacityTier, build_network
from .persistence import (
    atomic_write,
    load_checkpoint,
    load_policy,
    load_replay,
    policy_digest,
    save_checkpoint,
    save_replay,
)
from .ppo import train

log = logging.getLogger("distillery")


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so exit codes stay ours."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="distillery", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="phase 1: PPO-train a teacher")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("collect", help="phase 2: record a replay buffer")
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--records", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="replay buffer file")

    p = sub.add_parser("distill", help="phase 3: train a student offline")
    p.add_argument("--buffer", required=True)
    p.add_argument("--tier", choices=("high", "medium", "low"), required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="student checkpoint")

    p = sub.add_parser("finetune", help="continue a student with PPO")
    p.add_argument("--student", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="tuned checkpoint")

    p = sub.add_parser("evaluate", help="score a policy over full episodes")
    p.add_argument("--policy", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="report CSV")

    p = sub.add_parser("sweep-epochs", help="distill fresh students per epoch count")
    p.add_argument("--buffer", required=True)
    p.add_argument("--tiers", default="medium,low", help="comma-separated tier tags")
    p.add_argument("--epochs", required=True, help="comma-separated epoch counts")
    p.add_argument("--eval-steps", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="sweep CSV")

    p = sub.add_parser("report", help="compare score columns with geometric means")
    p.add_argument("--columns", required=True, help="name=csv,name=csv,...")
    p.add_argument("--teacher", required=True)
    p.add_argument("--baseline", default=None, help="defaults to the first column")
    p.add_argument("--out", default=None, help="optional CSV output")
    return parser


def _resolve_seed(args_seed, config: ExperimentConfig | None) -> int:
    if args_seed is not None:
        return args_seed
    return config.seed if config is not None else 0


def _csv_bytes(hash_value: str, header: list[str], rows: list[list[str]]) -> bytes:
    lines = [f"# config_hash={hash_value}", ",".join(header)]
    lines.extend(",".join(row) for row in rows)
    return ("\n".join(lines) + "\n").encode("utf-8")


def _write_eval_csv(path, hash_value, env_id, agent, report):
    rows = [[env_id, agent, str(report.episodes), str(report.mean),
             str(report.std), str(report.high)]]
    atomic_write(path, _csv_bytes(hash_value, ["env", "agent", "episodes", "mean", "std", "high"], rows))


def _cmd_train_teacher(args) -> int:
    config = load_config(args.config)
    seed = _resolve_seed(args.seed, config)
    chash = config_hash(config)
    log.info("training teacher: env=%s tier=%s seed=%d", config.env.id, config.tier.tag, seed)
    policy, curve = train(config.env, config.tier, config.ppo, seed)
    provenance = {
        "algorithm": "ppo",
        "env": config.env.to_dict(),
        "seed": seed,
        "env_steps": config.ppo.total_env_steps,
        "config_hash": chash,
        "tier": config.tier.tag,
    }
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(policy, provenance, os.path.join(args.out, "teacher.ckpt"))
    rows = [[str(pt.env_steps), str(pt.mean_return), str(pt.std_return), str(pt.episodes)]
            for pt in curve]
    atomic_write(
        os.path.join(args.out, "learning_curve.csv"),
        _csv_bytes(chash, ["env_steps", "mean_return", "std_return", "episodes"], rows),
    )
    return 0


def _cmd_collect(args) -> int:
    teacher, provenance = load_checkpoint(args.teacher)
    env_spec = EnvSpec.from_dict(provenance["env"])
    seed = _resolve_seed(args.seed, None)
    env = build_env(env_spec, streams.env_generator(seed, 0))
    log.info("collecting %d records on %s", args.records, env_spec.id)
    buffer = distill_mod.collect_replay(
        teacher, env, args.records, seed, teacher_id=policy_digest(teacher)
    )
    save_replay(buffer, args.out)
    return 0


def _cmd_distill(args) -> int:
    buffer = load_replay(args.buffer)
    seed = _resolve_seed(args.seed, None)
    tier = CapacityTier.default(args.tier)
    dconfig = distill_mod.DistillConfig(epochs=args.epochs).validate()
    effective = {
        "tier": tier.tag,
        "widths": tier.hidden_widths,
        "epochs": dconfig.epochs,
        "minibatch_size": dconfig.minibatch_size,
        "stepsize": dconfig.stepsize,
        "temperature": dconfig.temperature,
        "floor": dconfig.floor,
        "seed": seed,
    }
    chash = hash_of_mapping(effective)
    student = build_network(
        buffer.obs_dim, buffer.action_count, tier.hidden_widths,
        streams.generator(seed, streams.INIT),
    )
    log.info("distilling %s student for %d epochs", tier.tag, dconfig.epochs)
    student, losses = distill_mod.distill(student, buffer, dconfig, seed)
    provenance = {
        "algorithm": "distill",
        "env": buffer.metadata.get("env"),
        "seed": seed,
        "env_steps": 0,
        "config_hash": chash,
        "tier": tier.tag,
        "teacher_id": buffer.metadata.get("teacher_id", ""),
        "epochs": dconfig.epochs,
    }
    save_checkpoint(student, provenance, args.out)
    rows = [[str(i + 1), str(loss)] for i, loss in enumerate(losses)]
    atomic_write(args.out + ".loss.csv", _csv_bytes(chash, ["epoch", "mean_kl"], rows))
    return 0


def _cmd_finetune(args) -> int:
    config = load_config(args.config)
    seed = _resolve_seed(args.seed, config)
    student = load_policy(args.student, expect_spec=config.env)
    ppo_config = config.ppo
    ppo_config.total_env_steps = args.steps
    ppo_config.validate()
    chash = config_hash(config)
    log.info("fine-tuning for %d env steps", args.steps)
    tuned, curve = distill_mod.finetune(student, config.env, ppo_config, seed)
    provenance = {
        "algorithm": "finetune",
        "env": config.env.to_dict(),
        "seed": seed,
        "env_steps": args.steps,
        "config_hash": chash,
    }
    save_checkpoint(tuned, provenance, args.out)
    rows = [[str(pt.env_steps), str(pt.mean_return), str(pt.std_return), str(pt.episodes)]
            for pt in curve]
    atomic_write(
        args.out + ".curve.csv",
        _csv_bytes(chash, ["env_steps", "mean_return", "std_return", "episodes"], rows),
    )
    return 0


def _cmd_evaluate(args) -> int:
    config = load_config(args.config)
    seed = _resolve_seed(args.seed, config)
    steps = args.steps if args.steps is not None else config.eval_steps
    policy = load_policy(args.policy, expect_spec=config.env)
    report = evaluate(policy, config.env, steps, seed)
    agent = os.path.splitext(os.path.basename(args.policy))[0]
    _write_eval_csv(args.out, config_hash(config), config.env.id, agent, report)
    log.info("evaluated %s: mean=%g over %d episodes", agent, report.mean, report.episodes)
    return 0


def _cmd_sweep_epochs(args) -> int:
    buffer = load_replay(args.buffer)
    seed = _resolve_seed(args.seed, None)
    tier_tags = [t.strip() for t in args.tiers.split(",") if t.strip()]
    try:
        epoch_list = [int(e) for e in args.epochs.split(",") if e.strip()]
    except ValueError as err:
        raise UsageError(f"--epochs expects comma-separated integers: {err}") from err
    if not epoch_list:
        raise UsageError("--epochs must list at least one epoch count")
    tiers = [CapacityTier.default(tag) for tag in tier_tags]
    effective = {
        "tiers": tier_tags,
        "epochs": epoch_list,
        "eval_steps": args.eval_steps,
        "seed": seed,
    }
    rows = distill_mod.epoch_sweep(tiers, epoch_list, buffer, args.eval_steps, seed)
    csv_rows = [
        [row.tier, str(row.epochs), str(row.report.episodes), str(row.report.mean),
         str(row.report.std), str(row.report.high)]
        for row in rows
    ]
    atomic_write(
        args.out,
        _csv_bytes(hash_of_mapping(effective),
                   ["tier", "epochs", "episodes", "mean", "std", "high"], csv_rows),
    )
    return 0


def _read_score_column(path: str) -> dict[str, ScoreCell]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = [ln.strip() for ln in handle if ln.strip() and not ln.startswith("#")]
    except OSError as err:
        raise ConfigError(f"cannot read score CSV {path}: {err}") from err
    if not lines:
        raise ConfigError(f"score CSV {path} is empty")
    header = lines[0].split(",")
    expected = ["env", "agent", "episodes", "mean", "std", "high"]
    if header != expected:
        raise ConfigError(f"{path}: header {header} != {expected}")
    cells: dict[str, ScoreCell] = {}
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 6:
            raise ConfigError(f"{path}: malformed row {line!r}")
        env, _, episodes, mean, std, high = parts
        cells[env] = ScoreCell(
            mean=float(mean), std=float(std), high=float(high),
            episodes=int(episodes) if episodes else 0,
        )
    return cells


def _cmd_report(args) -> int:
    columns: dict[str, dict[str, ScoreCell]] = {}
    for pair in args.columns.split(","):
        if "=" not in pair:
            raise UsageError(f"--columns entries must be name=csv, got {pair!r}")
        name, _, path = pair.partition("=")
        columns[name.strip()] = _read_score_column(path.strip())
    report = comparison_report(columns, args.teacher, args.baseline)
    print(report.to_text())
    if args.out:
        header = ["env", "agent", "episodes", "mean", "std", "high"]
        inputs_hash = hash_of_mapping(
            {"columns": sorted(columns), "teacher": args.teacher,
             "baseline": args.baseline or next(iter(columns))}
        )
        atomic_write(args.out, _csv_bytes(inputs_hash, header, report.to_csv_rows()))
    return 0


_COMMANDS = {
    "train-teacher": _cmd_train_teacher,
    "collect": _cmd_collect,
    "distill": _cmd_distill,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "sweep-epochs": _cmd_sweep_epochs,
    "report": _cmd_report,
}

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def run(argv: list[str]) -> int:
    """Execute one subcommand; returns the process exit code."""
    level_name = os.environ.get("DISTILLERY_LOG", "error").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level_name, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except DistilleryError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
