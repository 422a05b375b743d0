"""Deep Q-learning driven by multi-batch line-search L-BFGS, plus an SGD baseline.

The experience memory holds exactly one batch. When it fills, one optimization
step consumes it whole and it is emptied; there is no replay. Gradients for the
quasi-Newton direction average the current batch with the previous batch
(evaluated at the current iterate), and curvature pairs use gradient
differences measured on the same batch at both ends of the step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from qnrl import qnet
from qnrl.envs import GridWorld, TabularQ, env_reset, env_step, features, reachable_cells
from qnrl.errors import DivergedError, InvalidInputError
from qnrl.lbfgs import LbfgsMemory, push_pair, search_direction
from qnrl.linesearch import WolfeParams, line_search

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Experience:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


class ExperienceMemory:
    """Transition buffer of capacity ``b``."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidInputError("experience memory capacity must be positive")
        self.capacity = capacity
        self.buffer: list[Experience] = []

    def __len__(self) -> int:
        return len(self.buffer)

    def append(self, e: Experience, evict: bool = False):
        if len(self.buffer) >= self.capacity:
            if not evict:
                raise InvalidInputError("experience memory is full")
            self.buffer.pop(0)
        self.buffer.append(e)

    def full(self) -> bool:
        return len(self.buffer) == self.capacity

    def clear(self):
        self.buffer = []

    def arrays(self, indices=None):
        """Stacked ``(S, A, R, S_next, terminal)`` arrays in buffer order."""
        batch = self.buffer if indices is None else [self.buffer[i] for i in indices]
        if not batch:
            raise InvalidInputError("experience memory is empty")
        S = np.stack([e.s for e in batch])
        A = np.array([e.a for e in batch], dtype=np.intp)
        R = np.array([e.r for e in batch], dtype=np.float64)
        S2 = np.stack([e.s_next for e in batch])
        T = np.array([e.terminal for e in batch], dtype=bool)
        return S, A, R, S2, T


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2048
    lbfgs_memory: int = 40
    discount: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.1
    anneal_fraction: float = 0.5
    total_steps: int = 200_000
    test_eps: float = 0.05
    test_interval: int = 10_000
    grad_norm_stop_threshold: float = 1e-6
    wolfe: WolfeParams = field(default_factory=WolfeParams)
    seed: int = 0
    optimizer: str = "lbfgs"
    sgd_learning_rate: float = 0.00025
    sgd_batch_size: int = 32
    sgd_update_freq: int = 4

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be at least 1")
        if self.lbfgs_memory < 1:
            raise InvalidInputError("lbfgs_memory must be at least 1")
        if not 0.0 <= self.discount <= 1.0:
            raise InvalidInputError("discount must lie in [0, 1]")
        if not self.eps_start >= self.eps_end >= 0.0 or self.eps_start > 1.0:
            raise InvalidInputError("need 1 >= eps_start >= eps_end >= 0")
        if not 0.0 <= self.test_eps <= 1.0:
            raise InvalidInputError("test_eps must lie in [0, 1]")
        if not 0.0 <= self.anneal_fraction <= 1.0:
            raise InvalidInputError("anneal_fraction must lie in [0, 1]")
        if self.total_steps < 0 or self.test_interval < 1:
            raise InvalidInputError("total_steps must be >= 0 and test_interval >= 1")
        if self.optimizer not in ("lbfgs", "sgd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.sgd_learning_rate <= 0.0 or self.sgd_batch_size < 1 or self.sgd_update_freq < 1:
            raise InvalidInputError("SGD learning rate, batch size and frequency must be positive")


@dataclass
class TrainLogRecord:
    k: int
    env_steps: int
    loss: float
    grad_norm: float
    alpha: float
    wolfe_satisfied: bool
    floor_hit: bool
    pair_accepted: bool
    epsilon: float
    f_evals: int
    g_evals: int
    test_score: Optional[float] = None
    loss_next: float = float("nan")
    dir_deriv: float = float("nan")
    direction_reset: bool = False
    q_gap: Optional[float] = None
    wall_ms: float = 0.0


# wall_ms varies run to run and would break byte-identical logs
CSV_COLUMNS = tuple(f.name for f in fields(TrainLogRecord) if f.name != "wall_ms")


@dataclass(frozen=True)
class TrainerState:
    w: np.ndarray
    w_target: np.ndarray
    mem: LbfgsMemory
    D: ExperienceMemory
    prev_overlap_grad: Optional[np.ndarray] = None
    k: int = 0
    env_steps: int = 0


def init_state(w0: np.ndarray, config: TrainConfig) -> TrainerState:
    w0 = np.array(w0, dtype=np.float64)
    return TrainerState(w=w0, w_target=w0.copy(), mem=LbfgsMemory(config.lbfgs_memory),
                        D=ExperienceMemory(config.batch_size))


def epsilon_schedule(step: int, total_anneal_steps: float, eps_start: float = 1.0,
                     eps_end: float = 0.1) -> float:
    if step >= total_anneal_steps:
        return float(eps_end)
    return float(eps_start + (eps_end - eps_start) * step / total_anneal_steps)


def epsilon_greedy(q, eps: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability ``eps``, else the lowest argmax."""
    q = np.asarray(q)
    if rng.random() < eps:
        return int(rng.integers(q.shape[0]))
    return int(np.argmax(q))


def td_target(e: Experience, spec: qnet.NetworkSpec, w_target, discount: float) -> float:
    if e.terminal:
        return float(e.r)
    return float(e.r + discount * np.max(qnet.forward(spec, w_target, e.s_next)))


def td_targets(spec, w_target, R, S_next, terminal, discount) -> np.ndarray:
    bootstrap = qnet.forward(spec, w_target, S_next).max(axis=1)
    return R + np.where(terminal, 0.0, discount * bootstrap)


def _loss_and_grad(spec, w, S, A, Y, with_grad=True):
    q, vjp = qnet.q_and_vjp(spec, w, S, A)
    resid = Y - q
    n = len(Y)
    loss = 0.5 * float(np.dot(resid, resid)) / n
    if not with_grad:
        return loss, None
    return loss, vjp(-resid / n)


def _frozen_batch(spec, w_target, D: ExperienceMemory, discount):
    if len(D) == 0:
        raise InvalidInputError("experience memory is empty")
    S, A, R, S2, T = D.arrays()
    return S, A, td_targets(spec, w_target, R, S2, T, discount)


def batch_loss(spec, w, w_target, D: ExperienceMemory, discount: float) -> float:
    """Half mean squared TD error with targets from ``w_target`` held fixed."""
    S, A, Y = _frozen_batch(spec, w_target, D, discount)
    return _loss_and_grad(spec, w, S, A, Y, with_grad=False)[0]


def overlap_gradient(spec, w, w_target, D: ExperienceMemory, discount: float) -> np.ndarray:
    S, A, Y = _frozen_batch(spec, w_target, D, discount)
    return _loss_and_grad(spec, w, S, A, Y)[1]


def _same_shape(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def combined_gradient(g_curr, g_prev) -> np.ndarray:
    g_curr, g_prev = _same_shape(g_curr, g_prev, "combined_gradient")
    return 0.5 * (g_curr + g_prev)


def overlap_y(g_next, g_curr) -> np.ndarray:
    g_next, g_curr = _same_shape(g_next, g_curr, "overlap_y")
    return g_next - g_curr


def sgd_step(w, g, lr: float) -> np.ndarray:
    w, g = _same_shape(w, g, "sgd_step")
    if lr <= 0.0:
        raise InvalidInputError("learning rate must be positive")
    return w - lr * g


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise DivergedError("non-finite loss or gradient during training")


def optimization_step(state: TrainerState, spec: qnet.NetworkSpec,
                      config: TrainConfig) -> tuple[TrainerState, TrainLogRecord]:
    """One multi-batch line-search L-BFGS update on the full experience memory."""
    t0 = time.perf_counter()
    S, A, Y = _frozen_batch(spec, state.w_target, state.D, config.discount)
    w = state.w
    loss0, g_curr = _loss_and_grad(spec, w, S, A, Y)
    _check_finite(loss0, g_curr)
    if state.prev_overlap_grad is None:
        g_comb = g_curr
    else:
        g_comb = combined_gradient(g_curr, state.prev_overlap_grad)
    grad_norm = float(np.linalg.norm(g_comb))

    p = search_direction(state.mem, g_comb)
    g0p = float(np.dot(g_curr, p))
    reset = False
    if not g0p < 0.0:
        # the averaged direction need not descend on the current batch alone
        reset = True
        p = search_direction(state.mem, g_curr)
        g0p = float(np.dot(g_curr, p))

    if g0p < 0.0:
        cache = {}

        def phi(alpha):
            f, g = _loss_and_grad(spec, w + alpha * p, S, A, Y)
            cache[alpha] = g
            return f, float(np.dot(g, p))

        ls = line_search(phi, loss0, g0p, config.wolfe)
        alpha, loss_next = ls.alpha, ls.f_alpha
        wolfe_ok, floor_hit, f_evals, g_evals = ls.wolfe_satisfied, ls.floor_hit, ls.f_evals, ls.g_evals
        g_next = cache[alpha]
    else:
        # exactly zero gradient on this batch: nothing to do
        alpha, loss_next, wolfe_ok, floor_hit, f_evals, g_evals = 0.0, loss0, False, False, 0, 0
        g_next = g_curr

    w_next = w + alpha * p
    _check_finite(loss_next, g_next, w_next)
    s = w_next - w
    mem, accepted = push_pair(state.mem, s, overlap_y(g_next, g_curr))

    new_state = TrainerState(
        w=w_next,
        w_target=w.copy(),
        mem=mem,
        D=ExperienceMemory(state.D.capacity),
        prev_overlap_grad=g_next,
        k=state.k + 1,
        env_steps=state.env_steps,
    )
    record = TrainLogRecord(
        k=state.k, env_steps=state.env_steps, loss=loss0, grad_norm=grad_norm, alpha=alpha,
        wolfe_satisfied=wolfe_ok, floor_hit=floor_hit, pair_accepted=accepted, epsilon=float("nan"),
        f_evals=f_evals, g_evals=g_evals, loss_next=loss_next, dir_deriv=g0p,
        direction_reset=reset, wall_ms=1000.0 * (time.perf_counter() - t0),
    )
    return new_state, record


def q_optimality_gap(spec, w, oracle: TabularQ, env: GridWorld) -> float:
    """Sup-norm distance to the oracle over non-terminal, non-obstacle cells."""
    cells = [c for c in env.cells() if c != env.goal]
    X = np.stack([features(env, c) for c in cells])
    q = qnet.forward(spec, w, X)
    q_star = np.stack([oracle[env.index(c)] for c in cells])
    return float(np.max(np.abs(q - q_star)))


def greedy_agreement(spec, w, oracle: TabularQ, env: GridWorld, tol: float = 1e-9) -> float:
    """Fraction of reachable cells whose greedy action is optimal under the oracle.

    Ties in the oracle count as agreement with any of the tied actions.
    """
    cells = reachable_cells(env)
    X = np.stack([features(env, c) for c in cells])
    greedy = np.argmax(qnet.forward(spec, w, X), axis=1)
    agree = 0
    for c, a in zip(cells, greedy):
        row = oracle[env.index(c)]
        agree += row[a] >= row.max() - tol
    return agree / len(cells)


def run_test_episode(env: GridWorld, spec, w, eps: float, rng: np.random.Generator) -> float:
    """Return of one episode with frozen weights."""
    s = env_reset(env)
    total = 0.0
    while True:
        a = epsilon_greedy(qnet.forward(spec, w, features(env, s)), eps, rng)
        s, r, done = env_step(env, s, a)
        total += r
        if done:
            return total


@dataclass
class TrainResult:
    records: list[TrainLogRecord]
    w: np.ndarray
    w0: np.ndarray
    stop_reason: str
    env_steps: int
    test_scores: list[tuple[int, float]]
    wall_s: float
    max_memory_after_step: int = 0


def train(config: TrainConfig, env: GridWorld, spec: qnet.NetworkSpec, w0=None,
          oracle: TabularQ | None = None) -> TrainResult:
    if spec.n_inputs != env.n_cells:
        raise InvalidInputError(f"network takes {spec.n_inputs} inputs but the grid has {env.n_cells} cells")
    if spec.n_actions != 4:
        raise InvalidInputError("grid worlds have 4 actions")
    t0 = time.perf_counter()
    if w0 is None:
        w0 = qnet.init_weights(spec, config.seed)
    w0 = qnet.check_params(spec, w0).copy()
    act_seq, test_seq, sgd_seq = np.random.SeedSequence(config.seed).spawn(3)
    rng = np.random.default_rng(act_seq)
    test_rng = np.random.default_rng(test_seq)
    sgd_rng = np.random.default_rng(sgd_seq)

    state = init_state(w0, config)
    anneal = config.anneal_fraction * config.total_steps
    records: list[TrainLogRecord] = []
    test_scores: list[tuple[int, float]] = []
    pending_score = None
    stop_reason = "total_steps"
    max_mem_after = 0
    s = env_reset(env)
    x = features(env, s)
    env_steps = 0
    sgd_k = 0

    while env_steps < config.total_steps:
        eps = epsilon_schedule(env_steps, anneal, config.eps_start, config.eps_end)
        a = epsilon_greedy(qnet.forward(spec, state.w, x), eps, rng)
        s2, r, done = env_step(env, s, a)
        x2 = features(env, s2)
        state.D.append(Experience(x, a, r, x2, done), evict=config.optimizer == "sgd")
        env_steps += 1
        if done:
            s = env_reset(env)
            x = features(env, s)
        else:
            s, x = s2, x2

        if env_steps % config.test_interval == 0:
            pending_score = run_test_episode(env, spec, state.w, config.test_eps, test_rng)
            test_scores.append((env_steps, pending_score))

        record = None
        if config.optimizer == "lbfgs":
            if state.D.full():
                state = replace(state, env_steps=env_steps)
                state, record = optimization_step(state, spec, config)
                max_mem_after = max(max_mem_after, len(state.D))
        else:
            if env_steps % config.batch_size == 0:
                state = replace(state, w_target=state.w.copy())
            if env_steps % config.sgd_update_freq == 0 and len(state.D) >= config.sgd_batch_size:
                record, w_new = _sgd_update(state, spec, config, sgd_rng, sgd_k, env_steps)
                state = replace(state, w=w_new, k=sgd_k + 1, env_steps=env_steps)
                sgd_k += 1

        if record is not None:
            record.epsilon = eps
            record.test_score = pending_score
            pending_score = None
            if oracle is not None:
                record.q_gap = q_optimality_gap(spec, state.w, oracle, env)
            records.append(record)
            log.debug("k=%d loss=%.6g alpha=%.3g", record.k, record.loss, record.alpha)
            if record.grad_norm < config.grad_norm_stop_threshold:
                stop_reason = "grad_norm"
                break

    return TrainResult(records=records, w=state.w, w0=w0, stop_reason=stop_reason,
                       env_steps=env_steps, test_scores=test_scores,
                       wall_s=time.perf_counter() - t0, max_memory_after_step=max_mem_after)


def _sgd_update(state, spec, config, rng, k, env_steps):
    t0 = time.perf_counter()
    idx = rng.choice(len(state.D), size=config.sgd_batch_size, replace=False)
    S, A, R, S2, T = state.D.arrays(np.sort(idx))
    Y = td_targets(spec, state.w_target, R, S2, T, config.discount)
    loss, g = _loss_and_grad(spec, state.w, S, A, Y)
    _check_finite(loss, g)
    w_new = sgd_step(state.w, g, config.sgd_learning_rate)
    loss_next, _ = _loss_and_grad(spec, w_new, S, A, Y, with_grad=False)
    record = TrainLogRecord(
        k=k, env_steps=env_steps, loss=loss, grad_norm=float(np.linalg.norm(g)),
        alpha=config.sgd_learning_rate, wolfe_satisfied=False, floor_hit=False,
        pair_accepted=False, epsilon=float("nan"), f_evals=1, g_evals=1, loss_next=loss_next,
        dir_deriv=-float(np.dot(g, g)), wall_ms=1000.0 * (time.perf_counter() - t0),
    )
    return record, w_new
