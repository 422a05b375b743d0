"""Convex surrogate benchmarks, the fixed-step risk bound, and the cost model.

The risk bound is only meaningful where its hypotheses hold, so it is checked
on a strongly convex quadratic with a prescribed Hessian spectrum rather than on
the Q-learning loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qnrl.errors import DivergedError, InvalidInputError
from qnrl.lbfgs import DENSE_MAX_DIM, LbfgsMemory, minimize, push_pair, search_direction, two_loop
from qnrl.linesearch import WolfeParams, line_search

OPTIMIZERS = ("lbfgs-fixed-alpha", "lbfgs-wolfe", "lbfgs-exact", "sgd")

# the [0.1, 1] step clamp belongs to the RL loop; benches search all of (0, 1]
BENCH_WOLFE = WolfeParams(alpha_min=1e-10, max_backtracks=40)


@dataclass
class QuadraticProblem:
    """L(w) = 1/2 (w - w*)' A (w - w*), split into additive components.

    Component ``i`` adds a linear term ``c_i'(w - w*)``; the ``c_i`` sum to zero,
    so they vanish from the full objective but make minibatch gradients noisy.
    Every minibatch shares the Hessian ``A``.
    """

    A: np.ndarray
    w_star: np.ndarray
    noise: np.ndarray
    lam: float
    Lam: float

    @property
    def n(self) -> int:
        return self.w_star.shape[0]

    @property
    def partitions(self) -> int:
        return self.noise.shape[0]

    @property
    def b_vec(self) -> np.ndarray:
        """Linear coefficient of the expanded form 1/2 w'Aw - b'w + const."""
        return self.A @ self.w_star

    def loss(self, w, idx=None) -> float:
        d = np.asarray(w) - self.w_star
        val = 0.5 * float(d @ self.A @ d)
        if idx is not None:
            val += float(self.noise[idx].mean(axis=0) @ d)
        return val

    def grad(self, w, idx=None) -> np.ndarray:
        g = self.A @ (np.asarray(w) - self.w_star)
        if idx is not None:
            g = g + self.noise[idx].mean(axis=0)
        return g

    def gap(self, w) -> float:
        return self.loss(w)


def make_quadratic(seed: int, n: int, lam: float, Lam: float, partitions: int = 16,
                   noise_scale: float = 1.0) -> QuadraticProblem:
    if n < 2:
        raise InvalidInputError("quadratic problems need n >= 2")
    if not 0.0 < lam <= Lam:
        raise InvalidInputError(f"need 0 < lambda <= Lambda, got {lam}, {Lam}")
    if partitions < 1:
        raise InvalidInputError("need at least one partition")
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    eigs = np.linspace(lam, Lam, n)
    A = (Q * eigs) @ Q.T
    A = 0.5 * (A + A.T)
    w_star = rng.standard_normal(n)
    noise = noise_scale * rng.standard_normal((partitions, n))
    noise -= noise.mean(axis=0)
    return QuadraticProblem(A, w_star, noise, float(lam), float(Lam))


@dataclass(frozen=True)
class BoundConstants:
    lam: float
    Lam: float
    lam_p: float
    Lam_p: float
    eta: float
    alpha: float

    def __post_init__(self):
        values = (self.lam, self.Lam, self.lam_p, self.Lam_p, self.eta, self.alpha)
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise InvalidInputError(f"bound constants must be positive, got {values}")
        if self.lam > self.Lam or self.lam_p > self.Lam_p:
            raise InvalidInputError("lower eigenvalue bounds exceed upper bounds")
        if not self.alpha < 1.0 / (2.0 * self.lam * self.lam_p):
            raise InvalidInputError(
                f"alpha={self.alpha} outside (0, {1.0 / (2.0 * self.lam * self.lam_p)})")

    @property
    def rate(self) -> float:
        return 1.0 - 2.0 * self.alpha * self.lam * self.lam_p

    @property
    def residual(self) -> float:
        return self.alpha**2 * self.Lam_p**2 * self.Lam * self.eta**2 / (4.0 * self.lam_p * self.lam)


def theorem1_bound(k: int, gap0: float, c: BoundConstants) -> float:
    """Upper bound on L(w_k) - L(w*) after ``k`` fixed-step iterations."""
    decay = c.rate**k
    return decay * gap0 + (1.0 - decay) * c.residual


def _h_spectrum(mem: LbfgsMemory, n: int, rng: np.random.Generator, probes: int = 32):
    """Extremal Rayleigh quotients of the two-loop operator.

    For n <= 64 the identity columns are probed, which recovers H exactly and
    so gives its true extremal eigenvalues; otherwise random probes are used.
    """
    if n <= DENSE_MAX_DIM:
        H = np.column_stack([two_loop(mem, e) for e in np.eye(n)])
        ev = np.linalg.eigvalsh(0.5 * (H + H.T))
        return float(ev[0]), float(ev[-1])
    quotients = []
    for _ in range(probes):
        v = rng.standard_normal(n)
        quotients.append(float(v @ two_loop(mem, v)) / float(v @ v))
    return min(quotients), max(quotients)


@dataclass
class ConvexBenchResult:
    optimizer: str
    gaps: list[float]
    grad_norms: list[float]
    alphas: list[float]
    eta: float
    lam_p: float
    Lam_p: float
    pairs_accepted: int = 0
    wolfe_flags: list[bool] = field(default_factory=list)

    def constants(self, problem: QuadraticProblem, alpha: float) -> BoundConstants:
        return BoundConstants(problem.lam, problem.Lam, self.lam_p, self.Lam_p, self.eta, alpha)


def run_convex_bench(problem: QuadraticProblem, optimizer: str = "lbfgs-fixed-alpha",
                     alpha: float = 0.2, m: int = 10, iterations: int = 500,
                     batch_fraction: float = 0.25, seed: int = 0, w0=None,
                     wolfe: WolfeParams = BENCH_WOLFE) -> ConvexBenchResult:
    """Run an optimizer on the quadratic with multi-batch stochastic gradients.

    Each iteration draws a fresh batch; the L-BFGS variants average its gradient
    with the previous batch's gradient at the current point and form curvature
    pairs from gradient differences on the current batch only. ``gaps[k]`` is the
    optimality gap after ``k`` iterations.

    ``lbfgs-exact`` steps to the exact minimizer of the batch objective along the
    search direction, which on a quadratic is available in closed form.
    """
    if optimizer not in OPTIMIZERS:
        raise InvalidInputError(f"unknown optimizer {optimizer!r}; choose from {OPTIMIZERS}")
    if not 0.0 < batch_fraction <= 1.0:
        raise InvalidInputError("batch_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    n, P = problem.n, problem.partitions
    batch = max(1, int(round(batch_fraction * P)))
    full = batch == P
    w = problem.w_star + rng.standard_normal(n) if w0 is None else np.array(w0, dtype=np.float64)
    gap0 = problem.gap(w)
    gaps, grad_norms, alphas, wolfe_flags = [gap0], [], [], []
    mem = LbfgsMemory(m)
    prev_g = None
    eta = 0.0
    lam_p, Lam_p = np.inf, 0.0
    accepted_total = 0
    probe_rng = np.random.default_rng([seed, 1])

    for _ in range(iterations):
        idx = None if full else np.sort(rng.choice(P, size=batch, replace=False))
        g_curr = problem.grad(w, idx)
        if optimizer == "sgd":
            g_step = g_curr
            p = -g_step
            lo = hi = 1.0
        else:
            g_step = g_curr if prev_g is None else 0.5 * (g_curr + prev_g)
            lo, hi = _h_spectrum(mem, n, probe_rng)
            p = search_direction(mem, g_step)
        eta = max(eta, float(np.linalg.norm(g_step)))
        lam_p, Lam_p = min(lam_p, lo), max(Lam_p, hi)

        step = alpha
        wolfe_ok = False
        g0p = float(g_curr @ p)
        if optimizer in ("lbfgs-wolfe", "lbfgs-exact"):
            if not g0p < 0.0:
                step = 0.0
            elif optimizer == "lbfgs-wolfe":
                ls = line_search(lambda a: (problem.loss(w + a * p, idx),
                                            float(problem.grad(w + a * p, idx) @ p)),
                                 problem.loss(w, idx), g0p, wolfe)
                step, wolfe_ok = ls.alpha, ls.wolfe_satisfied
            else:
                step = -g0p / float(p @ problem.A @ p)
                wolfe_ok = True
        w_next = w + step * p
        if optimizer != "sgd":
            g_next = problem.grad(w_next, idx)
            mem, accepted = push_pair(mem, w_next - w, g_next - g_curr)
            accepted_total += accepted
            prev_g = g_next
        w = w_next
        gap = problem.gap(w)
        if not np.isfinite(gap) or gap > 1e6 * max(gap0, np.finfo(float).tiny):
            raise DivergedError(f"gap {gap} exceeded 1e6 times the initial gap {gap0}")
        gaps.append(gap)
        grad_norms.append(float(np.linalg.norm(g_step)))
        alphas.append(step)
        wolfe_flags.append(wolfe_ok)

    return ConvexBenchResult(optimizer, gaps, grad_norms, alphas, eta, lam_p, Lam_p,
                             accepted_total, wolfe_flags)


def bound_violations(result: ConvexBenchResult, problem: QuadraticProblem, alpha: float,
                     rel_slack: float = 1e-9) -> tuple[int, list[float]]:
    """Count iterations whose gap exceeds the bound built from measured constants."""
    c = result.constants(problem, alpha)
    gap0 = result.gaps[0]
    bounds = [theorem1_bound(k, gap0, c) for k in range(len(result.gaps))]
    violations = sum(g > b * (1.0 + rel_slack) for g, b in zip(result.gaps, bounds))
    return int(violations), bounds


def cost_ratio(f: float, z: float, b_s: float, b: float, m: float) -> float:
    """Runtime of the L-BFGS learner relative to small-batch SGD at frequency ``f``."""
    return f * z / b_s + 4.0 * f * m / (b * b_s)


def rosenbrock_eval(w) -> tuple[float, np.ndarray]:
    x, y = float(w[0]), float(w[1])
    f = (1.0 - x) ** 2 + 100.0 * (y - x * x) ** 2
    g = np.array([-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)])
    return f, g


def run_rosenbrock(m: int = 10, x0=(-1.2, 1.0), gtol: float = 1e-5, max_iter: int = 200,
                   wolfe: WolfeParams = BENCH_WOLFE):
    return minimize(rosenbrock_eval, np.array(x0, dtype=np.float64), m=m, wolfe=wolfe,
                    gtol=gtol, max_iter=max_iter)
