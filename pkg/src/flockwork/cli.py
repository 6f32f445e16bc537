"""Command-line surface: simulate, generate data, train, evaluate, export.

Exit codes: 0 success, 2 usage error, 3 runtime failure. Every command ends
with one machine-readable JSON summary line on stdout.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import CONFIG_ENV_VAR, ConfigError, SwarmConfig, load_config
from .core import InfeasibleInitError
from .dataset import (DatasetError, generate_dataset, load_dataset, save_dataset)
from .evaluate import aggregate_metrics, per_trial_rows, run_trials
from .export import (TrajectoryError, export_trajectory, load_trajectory,
                     plot_trajectory_svg, trajectory_metrics, write_metrics_csv,
                     write_training_log_csv)
from .model import (CheckpointError, ModelSpec, load_checkpoint, save_checkpoint)
from .nn.gradcheck import CORE_LAYER_TYPES, run_gradient_checks
from .rollout import model_policy, run_episode
from .training import TrainSchedule, fit

RUNTIME_ERRORS = (ConfigError, DatasetError, CheckpointError, TrajectoryError,
                  InfeasibleInitError, ValueError, OSError)


def _print_summary(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _resolve_config(args, manifest: dict | None = None) -> SwarmConfig:
    """Config precedence: --config file, else checkpoint snapshot, else defaults."""
    overrides = args.set or []
    if getattr(args, "config", None) not in (None, "default"):
        return load_config(args.config, overrides)
    if manifest is not None and manifest.get("swarm_config"):
        base = dict(manifest["swarm_config"])
        for item in overrides:
            key, _, raw = item.partition("=")
            try:
                base[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                base[key.strip()] = raw
        return SwarmConfig.from_dict(base)
    return load_config(getattr(args, "config", None), overrides)


def _report_table(report) -> str:
    def cell(v):
        return "--" if v is None else f"{v:.4f}"

    lines = [
        f"{'trials':>12} {'completed':>10} {'C%':>8} {'MAE':>16} "
        f"{'V':>16} {'tau':>16}",
        f"{report.n_trials:>12} {report.n_completed:>10} "
        f"{report.completion_rate:>8.2f} "
        f"{cell(report.mae_mean):>8}±{cell(report.mae_std):<7} "
        f"{cell(report.vel_var_mean):>8}±{cell(report.vel_var_std):<7} "
        f"{cell(report.tau_mean):>8}±{cell(report.tau_std):<7}",
    ]
    return "\n".join(lines)


def cmd_simulate_expert(args) -> int:
    config = _resolve_config(args)
    records = run_trials(config, args.trials, args.seed, policy=None)
    report = aggregate_metrics(records)
    print(_report_table(report))
    if args.out:
        write_metrics_csv(report, per_trial_rows(records), args.out)
    _print_summary({"command": "simulate-expert", **report.to_dict(),
                    "out": args.out})
    return 0


def cmd_gen_data(args) -> int:
    if not args.out:
        raise ConfigError("gen-data requires --out")
    config = _resolve_config(args)
    dataset = generate_dataset(config, args.episodes, args.val_episodes, args.seed)
    save_dataset(dataset, args.out)
    _print_summary({
        "command": "gen-data", "out": args.out,
        "train_episodes": len(dataset.train_idx),
        "val_episodes": len(dataset.val_idx),
        "samples": dataset.n_samples, "seed": args.seed,
    })
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    config = dataset.config
    spec = ModelSpec(
        variant=args.variant,
        horizon=args.horizon,
        obs_width=config.obs_width,
        out_dim=config.dim,
    )
    schedule = TrainSchedule(
        epochs=args.epochs, initial_lr=args.lr, decay=args.decay,
        patience=args.patience, batch_steps=args.batch_steps,
        stride=args.stride, seed=args.seed,
    )
    result = fit(spec, dataset, schedule)
    if not args.quiet:
        for row in result.log:
            star = " *" if row["best"] else ""
            print(f"epoch {row['epoch']:>3}  lr {row['lr']:.3e}  "
                  f"train {row['train_loss']:.4f}  val MAE {row['val_mae']:.4f}{star}")
    save_checkpoint(result.params, spec, args.out, seed=args.seed,
                    swarm_config=config,
                    extra={"best_epoch": result.best_epoch,
                           "best_val_mae": result.best_val_mae,
                           "epochs_run": result.epochs_run,
                           "dataset_seed": dataset.master_seed})
    if args.log:
        write_training_log_csv(result.log, args.log)
    _print_summary({
        "command": "train", "out": args.out, "variant": args.variant,
        "horizon": args.horizon, "best_epoch": result.best_epoch,
        "best_val_mae": result.best_val_mae, "epochs_run": result.epochs_run,
    })
    return 0


def cmd_evaluate(args) -> int:
    params, spec, manifest = load_checkpoint(args.checkpoint)
    config = _resolve_config(args, manifest)
    policy = model_policy(params, spec)
    records = run_trials(config, args.trials, args.seed, policy=policy,
                         horizon=spec.horizon)
    report = aggregate_metrics(records)
    print(_report_table(report))
    if args.out:
        write_metrics_csv(report, per_trial_rows(records), args.out)
    _print_summary({"command": "evaluate", "checkpoint": args.checkpoint,
                    "variant": spec.variant, "horizon": spec.horizon,
                    **report.to_dict(), "out": args.out})
    return 0


def cmd_rollout(args) -> int:
    if not args.out:
        raise ConfigError("rollout requires --out")
    if bool(args.checkpoint) == bool(args.expert):
        raise ConfigError("rollout needs exactly one of --checkpoint or --expert")
    if args.checkpoint:
        params, spec, manifest = load_checkpoint(args.checkpoint)
        config = _resolve_config(args, manifest)
        record = run_episode(config, (args.seed, 0),
                             policy=model_policy(params, spec),
                             horizon=spec.horizon)
        driver = spec.variant
    else:
        config = _resolve_config(args)
        record = run_episode(config, (args.seed, 0), policy=None)
        driver = "expert"
    export_trajectory(record, args.out)
    if args.plot:
        plot_trajectory_svg(record, args.plot)
    _print_summary({"command": "rollout", "driver": driver,
                    "status": record.status.value, "steps": record.n_steps,
                    "out": args.out, "plot": args.plot})
    return 0


def cmd_metrics(args) -> int:
    traj = load_trajectory(args.traj)
    metrics = trajectory_metrics(traj)
    print(f"status {metrics['status']}  steps {metrics['steps']}  "
          f"tau {metrics['tau']:.6f}  V {metrics['vel_var']:.6f}  "
          f"MAE {metrics['mae']:.6f}")
    _print_summary({"command": "metrics", "traj": args.traj, **metrics})
    return 0


def cmd_grad_check(args) -> int:
    dtype = np.float64 if args.bits == 64 else np.float32
    tol = 1e-6 if args.bits == 64 else 1e-3
    layers = None if args.bits == 64 else CORE_LAYER_TYPES
    results = run_gradient_checks(instances=args.instances, dtype=dtype,
                                  seed=args.seed, layer_names=layers)
    ok = True
    for name, err in sorted(results.items()):
        passed = err < tol
        ok &= passed
        print(f"{name:>18}: max rel err {err:.3e}  "
              f"{'ok' if passed else 'FAIL'} (tol {tol:g})")
    _print_summary({"command": "grad-check", "bits": args.bits,
                    "instances": args.instances, "tolerance": tol,
                    "passed": ok, "max_errors": results})
    if not ok:
        raise RuntimeError("gradient check failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flockwork",
        description="Multi-robot flocking workbench: expert simulation, "
                    "imitation datasets, model training and evaluation.",
        epilog=f"The {CONFIG_ENV_VAR} environment variable sets the default "
               "config file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output path"):
        p.add_argument("--config", default=None,
                       help="config JSON file, or 'default'")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (JSON-parsed value)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help=out_help)

    p = sub.add_parser("simulate-expert", help="run seeded expert trials")
    common(p, "metrics CSV path")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_simulate_expert)

    p = sub.add_parser("gen-data", help="generate an expert-labeled dataset")
    common(p, "dataset file path (required)")
    p.add_argument("--episodes", type=int, default=40,
                   help="training episodes")
    p.add_argument("--val-episodes", type=int, default=10)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    p.add_argument("--variant", choices=("stgnn", "dgnn", "tgnn"),
                   default="stgnn")
    p.add_argument("--horizon", type=int, default=2, help="history length L")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay", type=float, default=0.98)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--batch-steps", type=int, default=32)
    p.add_argument("--stride", type=int, default=1,
                   help="train on every stride-th timestep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="closed-loop evaluation of a checkpoint")
    common(p, "metrics CSV path")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rollout", help="export one episode trajectory")
    common(p, "trajectory file path (required)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--expert", action="store_true",
                   help="drive with the expert instead of a checkpoint")
    p.add_argument("--plot", default=None, help="also write an SVG plot")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("metrics", help="recompute metrics from a trajectory file")
    p.add_argument("--traj", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("grad-check", help="finite-difference gradient checks")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--bits", type=int, choices=(32, 64), default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
