"""Command-line entry point.

Four commands share one JSON configuration: `train` fits the driving
policy and snapshots it, `evaluate` scores a frozen policy per weather,
`benchmark` compares edge and cloud deployments, and `gradcheck` verifies
the network gradients numerically.  Flags override config file values,
and the config file overrides embedded defaults.

Exit codes are a stable contract: 0 success, 1 check failure, 2 usage or
configuration error, 3 I/O error.  Outputs carry no timestamps, so a
repeated run with the same config and seed is byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import nn
from .agent import evaluate_policy, train_agent
from .benchmark import (
    fusion_rmse_experiment,
    run_benchmark,
    write_convergence_csv,
    write_episodes_csv,
    write_report_json,
)
from .config import ENV_CONFIG_PATH, MODE_NAMES, WEATHER_NAMES, RunConfig, load_run_config
from .errors import (
    ConfigurationError,
    DomainError,
    EdgeDriveError,
    ShapeError,
    UsageError,
)
from .fusion import DrivingStateEstimator
from .nn import Activation, Mlp, init_mlp, load_mlp, save_mlp

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

MODEL_FILENAME = "model.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgedrive",
        description="Train, evaluate and benchmark the edge driving pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--config",
            help=f"JSON config file (default: ${ENV_CONFIG_PATH} if set)",
        )
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out-dir", help="output directory override")

    p_train = sub.add_parser(
        "train", help="train the driving policy; writes model.json and convergence.csv"
    )
    add_common(p_train)
    p_train.add_argument("--episodes", type=int, help="training episodes")
    p_train.add_argument(
        "--weathers", nargs="+", metavar="W", help=f"rotation: {', '.join(WEATHER_NAMES)}"
    )

    p_eval = sub.add_parser(
        "evaluate", help="score a frozen policy per weather; writes evaluation.json"
    )
    add_common(p_eval)
    p_eval.add_argument("--episodes", type=int, help="episodes per weather")
    p_eval.add_argument("--weathers", nargs="+", metavar="W")
    p_eval.add_argument("--model", help=f"model snapshot (default: out_dir/{MODEL_FILENAME})")
    p_eval.add_argument(
        "--random-policy", action="store_true", help="evaluate uniform random actions"
    )
    p_eval.add_argument(
        "--fusion-episodes",
        type=int,
        help="also run the fused-vs-single-sensor comparison on this many episodes",
    )

    p_bench = sub.add_parser(
        "benchmark",
        help="edge vs cloud latency benchmark; writes report.json and episodes.csv",
    )
    add_common(p_bench)
    p_bench.add_argument("--modes", nargs="+", metavar="M", help=f"{', '.join(MODE_NAMES)}")
    p_bench.add_argument("--weathers", nargs="+", metavar="W")
    p_bench.add_argument("--episodes", type=int, help="episodes per (mode, weather) cell")
    p_bench.add_argument("--threads", type=int, help="worker threads")
    p_bench.add_argument("--model", help=f"model snapshot (default: out_dir/{MODEL_FILENAME})")
    p_bench.add_argument(
        "--random-policy", action="store_true", help="benchmark uniform random actions"
    )

    p_grad = sub.add_parser(
        "gradcheck", help="numeric gradient verification across layer types"
    )
    p_grad.add_argument("--seeds", type=int, default=20, help="seeds per component")
    p_grad.add_argument("--tolerance", type=float, default=1e-5)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    o: Dict[str, Any] = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.out_dir is not None:
        o["out_dir"] = args.out_dir
    if args.command == "train":
        section: Dict[str, Any] = {}
        if args.episodes is not None:
            section["episodes"] = args.episodes
        if args.weathers is not None:
            section["weathers"] = args.weathers
        if section:
            o["training"] = section
    elif args.command == "evaluate":
        section = {}
        if args.episodes is not None:
            section["episodes_per_weather"] = args.episodes
        if args.weathers is not None:
            section["weathers"] = args.weathers
        if args.fusion_episodes is not None:
            section["fusion_episodes"] = args.fusion_episodes
        if section:
            o["evaluation"] = section
    elif args.command == "benchmark":
        section = {}
        if args.episodes is not None:
            section["episodes_per_cell"] = args.episodes
        if args.weathers is not None:
            section["weathers"] = args.weathers
        if args.modes is not None:
            section["modes"] = args.modes
        if args.threads is not None:
            section["threads"] = args.threads
        if section:
            o["benchmark"] = section
    return o


def _estimator(rc: RunConfig) -> DrivingStateEstimator:
    return DrivingStateEstimator(
        dt=rc.scenario.dt,
        process_noise=rc.fusion_process_noise,
        odometry_variance=rc.fusion_odometry_variance,
        initial_gap=rc.fusion_initial_gap,
    )


def _load_policy(args: argparse.Namespace, rc: RunConfig) -> Optional[Mlp]:
    """The frozen policy network, or None for --random-policy."""
    if args.random_policy:
        return None
    path = Path(args.model) if args.model else rc.out_dir / MODEL_FILENAME
    if not path.is_file():
        raise ConfigurationError(
            f"model snapshot {path} not found; train first or pass --random-policy"
        )
    return load_mlp(path)


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config, _overrides(args))
    result = train_agent(
        rc.scenario,
        rc.agent,
        rc.training_episodes,
        rc.seed,
        weathers=rc.training_weathers,
        sensors=rc.sensors,
        estimator=_estimator(rc),
    )
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    model_path = rc.out_dir / MODEL_FILENAME
    save_mlp(result.qnet, model_path)
    curve_path = rc.out_dir / "convergence.csv"
    write_convergence_csv(result.history, curve_path)

    tail = result.history[-min(100, len(result.history)) :]
    print(f"trained {rc.training_episodes} episodes (seed {rc.seed})")
    if tail:
        mean_reward = sum(r.cumulative_reward for r in tail) / len(tail)
        collisions = sum(r.collided for r in tail)
        print(
            f"last {len(tail)} episodes: mean cumulative reward {mean_reward:.2f}, "
            f"{collisions} collisions"
        )
    print(f"wrote {model_path}")
    print(f"wrote {curve_path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config, _overrides(args))
    qnet = _load_policy(args, rc)
    cells = evaluate_policy(
        qnet,
        rc.scenario,
        rc.evaluation_episodes,
        rc.seed,
        weathers=rc.evaluation_weathers,
        sensors=rc.sensors,
        config=rc.agent,
        estimator=_estimator(rc),
    )
    payload: Dict[str, Any] = {
        "schema": "edgedrive-evaluation",
        "version": 1,
        "policy": "random" if qnet is None else "greedy",
        "episodes_per_weather": rc.evaluation_episodes,
        "cells": {
            name: {
                "episodes": c.episodes,
                "collisions": c.collisions,
                "collision_rate_pct": c.collision_rate_pct,
                "mean_cumulative_reward": c.mean_cumulative_reward,
                "mean_ticks": c.mean_ticks,
            }
            for name, c in cells.items()
        },
    }
    if rc.evaluation_fusion_episodes > 0:
        fusion = fusion_rmse_experiment(
            rc.scenario,
            rc.evaluation_fusion_episodes,
            rc.seed,
            weathers=rc.evaluation_weathers,
            sensors=rc.sensors,
            estimator=_estimator(rc),
        )
        payload["fusion"] = {
            name: {
                "n_samples": c.n_samples,
                "rmse_fused": c.rmse_fused,
                "rmse_by_sensor": dict(c.rmse_by_sensor),
                "camera_weight": c.camera_weight,
            }
            for name, c in fusion.items()
        }
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = rc.out_dir / "evaluation.json"
    _write_json(payload, out_path)

    print(f"policy: {payload['policy']}")
    for name, c in cells.items():
        print(
            f"  {name:<6} collision rate {c.collision_rate_pct:6.2f}%  "
            f"mean reward {c.mean_cumulative_reward:8.2f}"
        )
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config, _overrides(args))
    qnet = _load_policy(args, rc)
    report, rows = run_benchmark(
        qnet,
        rc.scenario,
        rc.benchmark_episodes,
        rc.seed,
        modes=rc.benchmark_modes,
        weathers=rc.benchmark_weathers,
        threads=rc.benchmark_threads,
        sensors=rc.sensors,
        config=rc.agent,
        perception_interval=rc.benchmark_perception_interval,
        estimator=_estimator(rc),
    )
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    report_path = rc.out_dir / "report.json"
    episodes_path = rc.out_dir / "episodes.csv"
    write_report_json(report, report_path)
    write_episodes_csv(rows, episodes_path)

    print(f"{'mode':<6} {'weather':<7} {'latency':>9} {'collis.':>8} {'accuracy':>9}")
    for c in report.cells:
        print(
            f"{c.mode:<6} {c.weather:<7} {c.mean_latency_ms:7.1f}ms "
            f"{c.collision_rate_pct:7.2f}% {c.accuracy_pct:8.2f}%"
        )
    print(f"wrote {report_path}")
    print(f"wrote {episodes_path}")
    return EXIT_OK


def _gradcheck_components(seed: int) -> List[tuple]:
    """(name, max relative error) for each architecture under one seed."""
    rng = np.random.default_rng(seed)
    out = []

    dense = init_mlp((6, 1), (Activation.SIGMOID,), rng)
    x = rng.normal(size=(4, 6))
    t = rng.normal(size=(4, 1))
    out.append(("dense-sigmoid", nn.gradient_check(dense, x, t)))

    deep = init_mlp((5, 8, 3), (Activation.RELU, Activation.LINEAR), rng)
    x = rng.normal(size=(4, 5))
    t = rng.normal(size=(4, 3))
    out.append(("dense-relu-stack", nn.gradient_check(deep, x, t)))

    cell = nn.init_cell(3, 2, rng)
    h0 = rng.normal(size=2)
    xs = rng.normal(size=(5, 3))
    t = rng.normal(size=2)
    out.append(("recurrent-cell", nn.gradient_check_cell(cell, h0, xs, t)))

    qnet = init_mlp((8, 32, 5), (Activation.RELU, Activation.LINEAR), rng)
    x = rng.normal(size=(4, 8))
    t = rng.normal(size=(4, 5))
    out.append(("q-network", nn.gradient_check(qnet, x, t)))
    return out


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.seeds < 1:
        raise ConfigurationError(f"--seeds must be >= 1, got {args.seeds}")
    worst: Dict[str, float] = {}
    for seed in range(args.seeds):
        for name, err in _gradcheck_components(seed):
            worst[name] = max(worst.get(name, 0.0), err)

    failed = []
    print(f"{'component':<18} {'max rel err':>12}  status")
    for name, err in worst.items():
        ok = err < args.tolerance
        if not ok:
            failed.append(name)
        print(f"{name:<18} {err:>12.3e}  {'ok' if ok else 'FAIL'}")
    if failed:
        print(
            f"gradient check failed for: {', '.join(failed)} "
            f"(tolerance {args.tolerance:g})",
            file=sys.stderr,
        )
        return EXIT_CHECK_FAILED
    print(f"all gradients within {args.tolerance:g} over {args.seeds} seeds")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if code in (None, 0):
            return EXIT_OK
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, UsageError, DomainError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EdgeDriveError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
