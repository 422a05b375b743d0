"""Command-line entry point: ``qnrl train | bench | oracle``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from qnrl import __version__, qnet
from qnrl.bench import (OPTIMIZERS, bound_violations, cost_ratio, make_quadratic,
                        run_convex_bench, run_rosenbrock)
from qnrl.config import SCHEMAS, load_config_file, resolve
from qnrl.envs import GridWorld, default_gridworld, load_grid, value_iteration
from qnrl.errors import (ConfigError, DivergedError, InvalidInputError, LineSearchFailure,
                         QnrlError)
from qnrl.io import (read_checkpoint, write_checkpoint, write_json, write_q_table, write_rows,
                     write_train_log)
from qnrl.linesearch import WolfeParams
from qnrl.trainer import TrainConfig, greedy_agreement, q_optimality_gap, train

log = logging.getLogger("qnrl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
BUILTIN_ENVS = {"gridworld6": default_gridworld}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_keys(parser: argparse.ArgumentParser, command: str):
    parser.add_argument("--config", help="flat key = value configuration file")
    for key in SCHEMAS[command]:
        flags = (f"--{key.name.replace('_', '-')}",) + key.flags
        parser.add_argument(*flags, dest=key.name, type=key.parse, default=None,
                            help=f"{key.help} (default: {key.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qnrl", description="Quasi-Newton deep Q-learning toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a Q-network on a grid world")
    _add_keys(p, "train")

    p = sub.add_parser("bench", help="optimizer benchmarks")
    bench_sub = p.add_subparsers(dest="bench", required=True, parser_class=_Parser)
    for name, text in (("quadratic", "fixed-step bound check on a stochastic quadratic"),
                       ("rosenbrock", "line-search L-BFGS on the Rosenbrock function"),
                       ("cost-ratio", "runtime ratio of L-BFGS to small-batch SGD")):
        _add_keys(bench_sub.add_parser(name, help=text), f"bench {name}")

    p = sub.add_parser("oracle", help="write the value-iteration Q table")
    _add_keys(p, "oracle")
    return parser


def _command_of(args) -> str:
    return f"bench {args.bench}" if args.command == "bench" else args.command


def _settings(args) -> dict:
    command = _command_of(args)
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {k.name: getattr(args, k.name) for k in SCHEMAS[command]}
    return resolve(command, file_values, overrides)


def _out_dir(cfg: dict, default: str) -> Path:
    out = Path(cfg["out"] or default)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory")
    return out


def _make_env(cfg: dict) -> GridWorld:
    opts = dict(step_reward=cfg["step_reward"], goal_reward=cfg["goal_reward"],
                max_episode_steps=cfg["max_episode_steps"])
    try:
        if cfg["env"] in BUILTIN_ENVS:
            return BUILTIN_ENVS[cfg["env"]](**opts)
        path = Path(cfg["env"])
        if not path.is_file():
            raise ConfigError(f"environment file {path} does not exist")
        return load_grid(path, **opts)
    except InvalidInputError as exc:
        raise ConfigError(f"bad environment: {exc}") from None


def _make_spec(env: GridWorld, hidden) -> qnet.NetworkSpec:
    try:
        return qnet.NetworkSpec((env.n_cells, *hidden, 4))
    except InvalidInputError as exc:
        raise ConfigError(f"bad layers: {exc}") from None


def _train_config(cfg: dict) -> TrainConfig:
    try:
        wolfe = WolfeParams(c1=cfg["c1"], c2=cfg["c2"], alpha_init=cfg["alpha_init"],
                            alpha_min=cfg["alpha_min"], max_backtracks=cfg["max_backtracks"])
        return TrainConfig(
            batch_size=cfg["batch_size"], lbfgs_memory=cfg["lbfgs_memory"], discount=cfg["discount"],
            eps_start=cfg["eps_start"], eps_end=cfg["eps_end"],
            anneal_fraction=cfg["anneal_fraction"], total_steps=cfg["total_steps"],
            test_eps=cfg["test_eps"], test_interval=cfg["test_interval"],
            grad_norm_stop_threshold=cfg["grad_norm_stop_threshold"], wolfe=wolfe,
            seed=cfg["seed"], optimizer=cfg["optimizer"],
            sgd_learning_rate=cfg["sgd_learning_rate"], sgd_batch_size=cfg["sgd_batch_size"],
            sgd_update_freq=cfg["sgd_update_freq"])
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(cfg: dict) -> int:
    env = _make_env(cfg)
    spec = _make_spec(env, cfg["layers"])
    config = _train_config(cfg)
    out = _out_dir(cfg, "runs/train")
    oracle = None
    if cfg["track_gap"]:
        if not cfg["discount"] < 1.0:
            raise ConfigError("track_gap needs discount < 1 for the value-iteration oracle")
        oracle = value_iteration(env, cfg["discount"])

    result = train(config, env, spec, oracle=oracle)

    out.mkdir(parents=True, exist_ok=True)
    write_train_log(out / "train_log.csv", result.records)
    write_checkpoint(out / "checkpoint.bin", result.w)
    alphas = np.array([r.alpha for r in result.records])
    summary = {
        "config": dict(cfg, layer_sizes=list(spec.layer_sizes)),
        "stop_reason": result.stop_reason,
        "env_steps": result.env_steps,
        "optimization_steps": len(result.records),
        "final_test_score": result.test_scores[-1][1] if result.test_scores else None,
        "test_scores": [list(t) for t in result.test_scores],
        "wall_time_s": result.wall_s,
        "alpha_one_fraction": float(np.mean(alphas == 1.0)) if alphas.size else None,
    }
    if oracle is not None:
        summary["q_gap_initial"] = q_optimality_gap(spec, result.w0, oracle, env)
        summary["q_gap_final"] = q_optimality_gap(spec, result.w, oracle, env)
        summary["greedy_agreement"] = greedy_agreement(spec, result.w, oracle, env)
    write_json(out / "summary.json", summary)
    print(f"{len(result.records)} optimization steps, stop reason {result.stop_reason}; "
          f"outputs in {out}")
    return EXIT_OK


def cmd_bench_quadratic(cfg: dict) -> int:
    if cfg["optimizer"] not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {cfg['optimizer']!r}; choose from {OPTIMIZERS}")
    if cfg["seeds"] < 1 or cfg["iterations"] < 1:
        raise ConfigError("seeds and iterations must be positive")
    out = _out_dir(cfg, "runs/bench-quadratic")
    fixed = cfg["optimizer"] in ("lbfgs-fixed-alpha", "sgd")
    rows, per_seed = [], []
    total_violations = 0
    for seed in range(cfg["seed"], cfg["seed"] + cfg["seeds"]):
        try:
            problem = make_quadratic(seed, cfg["n"], cfg["lam"], cfg["Lam"], cfg["partitions"])
            res = run_convex_bench(problem, cfg["optimizer"], alpha=cfg["alpha"], m=cfg["m"],
                                   iterations=cfg["iterations"],
                                   batch_fraction=cfg["batch_fraction"], seed=seed)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
        entry = {"seed": seed, "gap0": res.gaps[0], "final_gap": res.gaps[-1], "eta": res.eta,
                 "lambda_p": res.lam_p, "Lambda_p": res.Lam_p}
        bounds = [None] * len(res.gaps)
        if fixed:
            try:
                count, bounds = bound_violations(res, problem, cfg["alpha"])
            except InvalidInputError as exc:
                raise ConfigError(f"seed {seed}: alpha not admissible for measured constants: {exc}") from None
            entry["violations"] = count
            entry["residual"] = res.constants(problem, cfg["alpha"]).residual
            total_violations += count
        per_seed.append(entry)
        alphas = [None] + res.alphas
        grads = [None] + res.grad_norms
        rows.extend((seed, k, g, b, a, gn)
                    for k, (g, b, a, gn) in enumerate(zip(res.gaps, bounds, alphas, grads)))
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "bench.csv", ("seed", "iteration", "gap", "bound", "alpha", "grad_norm"), rows)
    write_json(out / "summary.json", {"config": cfg, "violations": total_violations if fixed else None,
                                      "seeds": per_seed})
    if fixed:
        print(f"violations = {total_violations}")
        return EXIT_OK if total_violations == 0 else EXIT_NUMERIC
    print("final gaps: " + ", ".join(f"{e['final_gap']:.3e}" for e in per_seed))
    return EXIT_OK


def cmd_bench_rosenbrock(cfg: dict) -> int:
    try:
        x0 = tuple(float(v) for v in cfg["x0"].split(","))
    except ValueError:
        raise ConfigError(f"bad x0 {cfg['x0']!r}") from None
    if len(x0) != 2:
        raise ConfigError("x0 needs two coordinates")
    out = _out_dir(cfg, "runs/bench-rosenbrock")
    res = run_rosenbrock(m=cfg["m"], x0=x0, gtol=cfg["gtol"], max_iter=cfg["max_iter"])
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "bench.csv", ("iteration", "f", "grad_norm", "alpha", "wolfe_satisfied"),
               [(h["iteration"], h["f"], h["grad_norm"], h["alpha"], h["wolfe_satisfied"])
                for h in res.history])
    write_json(out / "summary.json", {"config": cfg, "converged": res.converged,
                                      "iterations": res.iterations, "f": res.f,
                                      "grad_norm": res.grad_norm, "x": res.x})
    print(f"converged = {str(res.converged).lower()}, iterations = {res.iterations}")
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_bench_cost_ratio(cfg: dict) -> int:
    args = (cfg["f"], cfg["z"], cfg["bs"], cfg["b"], cfg["m"])
    if not all(v > 0 for v in args[:4]) or cfg["m"] < 0:
        raise ConfigError("f, z, bs and b must be positive and m non-negative")
    ratio = cost_ratio(*args)
    if cfg["out"]:
        out = _out_dir(cfg, "")
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "summary.json", {"config": cfg, "cost_ratio": ratio})
    print(f"{ratio:.2f}")
    return EXIT_OK


def cmd_oracle(cfg: dict) -> int:
    env = _make_env(cfg)
    if not 0.0 <= cfg["discount"] < 1.0:
        raise ConfigError("discount must lie in [0, 1) for value iteration")
    w = spec = None
    if cfg["checkpoint"]:
        path = Path(cfg["checkpoint"])
        if not path.is_file():
            raise ConfigError(f"checkpoint {path} does not exist")
        spec = _make_spec(env, cfg["layers"])
        try:
            w = qnet.check_params(spec, read_checkpoint(path))
        except InvalidInputError as exc:
            raise ConfigError(f"checkpoint does not match the environment and layers: {exc}") from None
    out = _out_dir(cfg, "runs/oracle")
    oracle = value_iteration(env, cfg["discount"], tol=cfg["tol"])
    out.mkdir(parents=True, exist_ok=True)
    write_q_table(out / "q_star.csv", env, oracle)
    summary = {"config": cfg, "rows": env.n_cells * 4}
    status = EXIT_OK
    if w is not None:
        gap = q_optimality_gap(spec, w, oracle, env)
        summary["q_gap"] = gap
        summary["greedy_agreement"] = greedy_agreement(spec, w, oracle, env)
        print(f"q_gap = {gap!r}")
        if cfg["gap_threshold"] is not None and not gap < cfg["gap_threshold"]:
            print(f"gap exceeds threshold {cfg['gap_threshold']}", file=sys.stderr)
            status = EXIT_NUMERIC
    write_json(out / "summary.json", summary)
    return status


COMMANDS = {
    "train": cmd_train,
    "bench quadratic": cmd_bench_quadratic,
    "bench rosenbrock": cmd_bench_rosenbrock,
    "bench cost-ratio": cmd_bench_cost_ratio,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _settings(args)
        return COMMANDS[_command_of(args)](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergedError, LineSearchFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except QnrlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
