"""Limited-memory BFGS: curvature-pair memory and the two-loop recursion.

The memory is an immutable value; ``push_pair`` returns a new memory.
``dense_inverse_hessian`` builds the same operator explicitly and exists to
certify ``two_loop`` on small problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from qnrl.errors import InvalidInputError, UnsupportedError

CURVATURE_EPS = 1e-8
DENSE_MAX_DIM = 64


@dataclass(frozen=True)
class CurvaturePair:
    s: np.ndarray
    y: np.ndarray
    sy: float


@dataclass(frozen=True)
class LbfgsMemory:
    """The ``capacity`` most recent accepted pairs, oldest first."""

    capacity: int
    pairs: tuple[CurvaturePair, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise InvalidInputError("L-BFGS memory capacity must be at least 1")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def dim(self) -> int | None:
        return self.pairs[0].s.shape[0] if self.pairs else None


def _as_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidInputError(f"{name} must be a 1-D vector")
    return v


def _check_dim(mem: LbfgsMemory, n: int):
    if mem.dim is not None and mem.dim != n:
        raise InvalidInputError(f"vector of length {n} does not match memory dimension {mem.dim}")


def accepts(s: np.ndarray, y: np.ndarray, eps: float = CURVATURE_EPS) -> bool:
    """Cautious update test: s'y must be positive relative to |s||y|."""
    sy = float(np.dot(s, y))
    return bool(np.isfinite(sy)) and sy > eps * float(np.linalg.norm(s)) * float(np.linalg.norm(y))


def push_pair(mem: LbfgsMemory, s, y) -> tuple[LbfgsMemory, bool]:
    s = _as_vector(s, "s")
    y = _as_vector(y, "y")
    if s.shape != y.shape:
        raise InvalidInputError(f"s has shape {s.shape} but y has shape {y.shape}")
    _check_dim(mem, s.shape[0])
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y))) or not accepts(s, y):
        return mem, False
    pair = CurvaturePair(s.copy(), y.copy(), float(np.dot(s, y)))
    pairs = (mem.pairs + (pair,))[-mem.capacity:]
    return LbfgsMemory(mem.capacity, pairs), True


def gamma_scaling(mem: LbfgsMemory) -> float:
    """y's / y'y of the newest pair, or 1 for an empty memory."""
    if not mem.pairs:
        return 1.0
    latest = mem.pairs[-1]
    return latest.sy / float(np.dot(latest.y, latest.y))


def two_loop(mem: LbfgsMemory, g) -> np.ndarray:
    """Return H g with H0 = gamma * I, without forming H."""
    g = _as_vector(g, "g")
    _check_dim(mem, g.shape[0])
    q = g.copy()
    alphas = []
    for pair in reversed(mem.pairs):
        a = float(np.dot(pair.s, q)) / pair.sy
        alphas.append(a)
        q -= a * pair.y
    r = gamma_scaling(mem) * q
    for pair, a in zip(mem.pairs, reversed(alphas)):
        beta = float(np.dot(pair.y, r)) / pair.sy
        r += (a - beta) * pair.s
    return r


def search_direction(mem: LbfgsMemory, g) -> np.ndarray:
    return -two_loop(mem, g)


def dense_inverse_hessian(mem: LbfgsMemory, n: int) -> np.ndarray:
    """Explicit inverse-Hessian approximation, one BFGS update per stored pair.

    H <- (I - rho s y') H (I - rho y s') + rho s s', with rho = 1 / y's,
    starting from gamma * I.
    """
    if n > DENSE_MAX_DIM:
        raise UnsupportedError(f"dense inverse Hessian limited to n <= {DENSE_MAX_DIM}, got {n}")
    _check_dim(mem, n)
    eye = np.eye(n)
    H = gamma_scaling(mem) * eye
    for pair in mem.pairs:
        rho = 1.0 / pair.sy
        V = eye - rho * np.outer(pair.y, pair.s)
        H = V.T @ H @ V + rho * np.outer(pair.s, pair.s)
    return 0.5 * (H + H.T)


@dataclass
class MinimizeResult:
    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list[dict]


def minimize(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0, m: int = 10,
             wolfe=None, gtol: float = 1e-5, max_iter: int = 200) -> MinimizeResult:
    """Line-search L-BFGS on a deterministic smooth objective.

    ``fun(x)`` returns ``(f, grad)``. A pair failing the cautious test restarts
    the memory: with backtracking capped at a unit step, an unchanged memory
    would keep proposing the same too-short step forever.
    """
    from qnrl.linesearch import WolfeParams, line_search

    wolfe = wolfe or WolfeParams(alpha_min=1e-10, max_backtracks=40)
    x = _as_vector(x0, "x0").copy()
    f, g = fun(x)
    mem = LbfgsMemory(m)
    history = []
    it = 0
    gnorm = float(np.linalg.norm(g))
    while gnorm >= gtol and it < max_iter:
        p = search_direction(mem, g)
        g0p = float(np.dot(g, p))
        if g0p >= 0.0:
            mem = LbfgsMemory(m)
            p = -g
            g0p = -float(np.dot(g, g))
        cache = {}

        def phi(alpha, x=x, p=p):
            fa, ga = fun(x + alpha * p)
            cache[alpha] = (fa, ga)
            return fa, float(np.dot(ga, p))

        ls = line_search(phi, f, g0p, wolfe)
        x_new = x + ls.alpha * p
        f_new, g_new = cache[ls.alpha] if ls.alpha in cache else fun(x_new)
        mem, accepted = push_pair(mem, x_new - x, g_new - g)
        if not accepted:
            mem = LbfgsMemory(m)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
        history.append({"iteration": it, "f": f, "grad_norm": gnorm, "alpha": ls.alpha,
                        "wolfe_satisfied": ls.wolfe_satisfied, "pair_accepted": accepted})
    return MinimizeResult(x, f, gnorm, it, gnorm < gtol, history)
