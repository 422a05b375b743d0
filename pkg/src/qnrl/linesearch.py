"""Backtracking step-size selection under the weak Wolfe conditions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from qnrl.errors import InvalidInputError, LineSearchFailure, NotDescentDirectionError


@dataclass(frozen=True)
class WolfeParams:
    c1: float = 1e-4
    c2: float = 0.9
    alpha_init: float = 1.0
    alpha_min: float = 0.1
    max_backtracks: int = 10

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise InvalidInputError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if not 0.0 < self.alpha_min <= self.alpha_init <= 1.0:
            raise InvalidInputError(
                f"need 0 < alpha_min <= alpha_init <= 1, got {self.alpha_min}, {self.alpha_init}")
        if self.max_backtracks < 1:
            raise InvalidInputError("max_backtracks must be positive")


@dataclass(frozen=True)
class LineSearchResult:
    alpha: float
    f_evals: int
    g_evals: int
    wolfe_satisfied: bool
    floor_hit: bool
    f_alpha: float
    g_alpha_p: float


def wolfe_check(f0: float, g0p: float, f_alpha: float, g_alpha_p: float, alpha: float,
                c1: float, c2: float) -> tuple[bool, bool]:
    """Return (sufficient decrease, curvature) for a trial step."""
    if not g0p < 0.0:
        raise NotDescentDirectionError(f"directional derivative {g0p} is not negative")
    sufficient = f_alpha <= f0 + c1 * alpha * g0p
    curvature = g_alpha_p >= c2 * g0p
    return bool(sufficient), bool(curvature)


def line_search(evaluate: Callable[[float], tuple[float, float]], f0: float, g0p: float,
                params: WolfeParams = WolfeParams()) -> LineSearchResult:
    """Halve alpha from ``alpha_init`` until both Wolfe conditions hold.

    ``evaluate(alpha)`` returns ``(phi(alpha), phi'(alpha))``. If the floor
    ``alpha_min`` is reached, or the backtrack budget runs out, the last trial
    step is returned with ``floor_hit`` set; the caller still takes that step.
    """
    if not g0p < 0.0:
        raise NotDescentDirectionError(f"directional derivative {g0p} is not negative")
    alpha = params.alpha_init
    evals = 0
    while True:
        f_alpha, g_alpha_p = evaluate(alpha)
        evals += 1
        finite = math.isfinite(f_alpha) and math.isfinite(g_alpha_p)
        if finite:
            ok = wolfe_check(f0, g0p, f_alpha, g_alpha_p, alpha, params.c1, params.c2)
            if all(ok):
                return LineSearchResult(alpha, evals, evals, True, False, f_alpha, g_alpha_p)
        at_floor = alpha <= params.alpha_min
        if at_floor or evals > params.max_backtracks:
            if not finite:
                raise LineSearchFailure(f"objective is not finite at the final trial step {alpha}")
            return LineSearchResult(alpha, evals, evals, False, True, f_alpha, g_alpha_p)
        alpha = max(alpha / 2.0, params.alpha_min)
