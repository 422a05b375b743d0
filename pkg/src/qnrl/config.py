"""Run configuration: typed keys, flat ``key = value`` files and overrides.

Resolution order is defaults, then the config file, then command-line flags.
Every key is validated before any computation starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from qnrl.errors import ConfigError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip().strip("[]")
    if not text:
        return ()
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    flags: tuple[str, ...] = ()


_COMMON = (
    Key("out", str, None, "output directory"),
    Key("seed", int, 0, "random seed"),
)

_ENV = (
    Key("env", str, "gridworld6", "built-in grid name or path to a grid text file"),
    Key("step_reward", _float, -0.01, "reward for each non-goal step"),
    Key("goal_reward", _float, 1.0, "reward for reaching the goal"),
    Key("max_episode_steps", int, 200, "episode step cap"),
    Key("discount", _float, 0.95, "discount factor"),
)

_TRAIN = _ENV + (
    Key("layers", _int_list, (), "hidden layer sizes, comma separated; empty means linear"),
    Key("batch_size", int, 2048, "experience memory size b", ("--b",)),
    Key("lbfgs_memory", int, 40, "L-BFGS memory m", ("--m",)),
    Key("eps_start", _float, 1.0, "initial exploration rate"),
    Key("eps_end", _float, 0.1, "final exploration rate"),
    Key("anneal_fraction", _float, 0.5, "fraction of total steps over which epsilon anneals"),
    Key("total_steps", int, 200_000, "environment steps"),
    Key("test_eps", _float, 0.05, "exploration rate of test episodes"),
    Key("test_interval", int, 10_000, "environment steps between test episodes"),
    Key("grad_norm_stop_threshold", _float, 1e-6, "stop once the gradient norm falls below this"),
    Key("c1", _float, 1e-4, "sufficient-decrease constant"),
    Key("c2", _float, 0.9, "curvature constant"),
    Key("alpha_init", _float, 1.0, "first trial step"),
    Key("alpha_min", _float, 0.1, "step-size floor"),
    Key("max_backtracks", int, 10, "line-search evaluation budget"),
    Key("optimizer", str, "lbfgs", "lbfgs or sgd"),
    Key("sgd_learning_rate", _float, 0.00025, "SGD learning rate", ("--lr",)),
    Key("sgd_batch_size", int, 32, "SGD minibatch size"),
    Key("sgd_update_freq", int, 4, "environment steps between SGD updates"),
    Key("track_gap", _bool, True, "log the Q optimality gap after every step"),
)

_QUADRATIC = (
    Key("n", int, 20, "problem dimension"),
    Key("lam", _float, 1.0, "smallest Hessian eigenvalue"),
    Key("Lam", _float, 10.0, "largest Hessian eigenvalue"),
    Key("partitions", int, 16, "number of loss components"),
    Key("batch_fraction", _float, 0.25, "fraction of components per minibatch"),
    Key("alpha", _float, 0.2, "fixed step size"),
    Key("m", int, 10, "L-BFGS memory"),
    Key("iterations", int, 500, "iterations per seed"),
    Key("seeds", int, 5, "number of consecutive seeds starting at --seed"),
    Key("optimizer", str, "lbfgs-fixed-alpha", "lbfgs-fixed-alpha, lbfgs-wolfe, lbfgs-exact or sgd"),
)

_ROSENBROCK = (
    Key("m", int, 10, "L-BFGS memory"),
    Key("gtol", _float, 1e-5, "gradient-norm tolerance"),
    Key("max_iter", int, 200, "iteration cap"),
    Key("x0", str, "-1.2,1", "starting point"),
)

_COST = (
    Key("f", _float, 4.0, "SGD update frequency"),
    Key("z", _float, 5.0, "gradient recomputations per L-BFGS step"),
    Key("bs", _float, 32.0, "SGD batch size"),
    Key("b", _float, 2048.0, "L-BFGS batch size"),
    Key("m", _float, 20.0, "L-BFGS memory"),
)

_ORACLE = _ENV + (
    Key("tol", _float, 1e-10, "value-iteration tolerance"),
    Key("checkpoint", str, None, "checkpoint to compare against the oracle"),
    Key("layers", _int_list, (), "hidden layer sizes of the checkpoint's network"),
    Key("gap_threshold", _float, None, "fail when the checkpoint's gap exceeds this"),
)

SCHEMAS: dict[str, tuple[Key, ...]] = {
    "train": _COMMON + _TRAIN,
    "bench quadratic": _COMMON + _QUADRATIC,
    "bench rosenbrock": _COMMON + _ROSENBROCK,
    "bench cost-ratio": _COMMON + _COST,
    "oracle": _COMMON + _ORACLE,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key = value`` pairs; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def load_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), str(path))


def resolve(command: str, file_values: dict[str, str], overrides: dict[str, Any]) -> dict[str, Any]:
    """Merge defaults, file values and overrides for ``command``."""
    schema = {k.name: k for k in SCHEMAS[command]}
    unknown = sorted(set(file_values) - set(schema))
    if unknown:
        raise ConfigError(f"unknown configuration keys for {command}: {', '.join(unknown)}")
    values = {name: key.default for name, key in schema.items()}
    for name, text in file_values.items():
        try:
            values[name] = schema[name].parse(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {name!r}: {exc}") from None
    for name, value in overrides.items():
        if name not in schema:
            raise ConfigError(f"unknown configuration key {name!r}")
        if value is not None:
            values[name] = value
    return values
