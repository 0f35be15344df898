"""Receding-horizon gradient descent-ascent and the simultaneous baseline.

``rgda`` walks backward in time: at each ``t`` it runs projected descent on the
minimizer's stage gains ``[K1; L1]`` and ascent on the maximizer's ``[K2; L2]``
against the receding-horizon cost, with the gains of later stages frozen at the
values already learned. ``baseline_gda`` instead updates every stage at once
against the full-horizon cost.

Budgets are counted in gradient evaluations: one per stage per iteration, so
``rgda`` spends ``T K`` and ``baseline_gda`` ``T`` per iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .grad import (SmoothingParams, continuation, exact_gradient, full_horizon_gradient,
                   project_ball, receding_cost, stack_player, with_player, zero_order_gradient)
from .model import LqMftgModel, PolicyProfile, StageGains
from .riccati import RiccatiSolution, closed_form_cost, receding_saddle, solve_riccati
from .sim import SimConfig, receding_costs, stream

__all__ = [
    "LearningTrace",
    "NashGap",
    "NumericalError",
    "RgdaConfig",
    "TraceRow",
    "baseline_gda",
    "default_proj_radius_sq",
    "inner_gda",
    "evaluations_used",
    "nash_gap",
    "policy_at_budget",
    "rgda",
]

GRADIENT_MODES = ("zero_order", "exact")
LR_SCHEDULES = ("constant", "inverse")
FALLBACK_PROJ_RADIUS_SQ = 100.0


class NumericalError(ArithmeticError):
    """A learner produced a non-finite cost or gradient."""

    def __init__(self, t: int, k: int, what: str):
        super().__init__(f"non-finite {what} at t={t}, k={k}")
        self.t = t
        self.k = k
        self.what = what


@dataclass(frozen=True)
class RgdaConfig:
    """Learner settings.

    ``lr`` is a constant, or a sequence giving ``eta_k`` per inner iteration.
    ``lr_schedule="inverse"`` turns a constant into ``lr / (k + 1)``.
    ``proj_radius_sq=None`` derives ``D`` from the Riccati gains when they exist
    (see :func:`default_proj_radius_sq`). ``sim`` controls the Monte-Carlo cost
    used by the zero-order mode: agent count, rollouts per candidate, method.
    """

    inner_iters: int = 1000
    lr: float | Sequence[float] = 0.001
    lr_schedule: str = "constant"
    smoothing: SmoothingParams = SmoothingParams(radius=1.0, batch=1000)
    proj_radius_sq: float | None = None
    sim: SimConfig = SimConfig(n_agents=100)
    eval_cov_y: np.ndarray | None = None
    eval_cov_z: np.ndarray | None = None
    seed: int = 0
    gradient_mode: str = "zero_order"
    early_stop_tol: float | None = None

    def __post_init__(self):
        if self.inner_iters < 0:
            raise ValueError("inner_iters must be >= 0")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if np.ndim(self.lr) == 0:
            if not self.lr > 0:
                raise ValueError("learning rate must be positive")
        else:
            rates = np.asarray(self.lr, dtype=float)
            if rates.size < self.inner_iters or not np.all(rates > 0):
                raise ValueError("learning-rate sequence must be positive and cover every iteration")
        if self.proj_radius_sq is not None and not self.proj_radius_sq > 0:
            raise ValueError("proj_radius_sq must be positive")

    def step_size(self, k: int) -> float:
        if np.ndim(self.lr) > 0:
            return float(self.lr[k])
        if self.lr_schedule == "inverse":
            return float(self.lr) / (k + 1)
        return float(self.lr)

    def covariances(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        cy = np.eye(m) if self.eval_cov_y is None else np.asarray(self.eval_cov_y, float)
        cz = np.eye(m) if self.eval_cov_z is None else np.asarray(self.eval_cov_z, float)
        return cy, cz


@dataclass(frozen=True, eq=False)
class TraceRow:
    """State after one iteration. ``t = -1`` marks a baseline (all-stage) row."""

    algo: str
    t: int
    k: int
    cost_estimate: float
    err_k: float | None
    err_l: float | None
    grad_norm: float
    proj_active: bool
    wall_ms: float
    seed: int
    saddle_gap: float | None = None
    gains: StageGains | PolicyProfile | None = None


@dataclass(eq=False)
class LearningTrace:
    algo: str
    rows: list[TraceRow] = field(default_factory=list)
    initial_err: dict[int, tuple[float | None, float | None]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def for_t(self, t: int) -> list[TraceRow]:
        return [r for r in self.rows if r.t == t]

    def column(self, name: str, t: int | None = None) -> np.ndarray:
        rows = self.rows if t is None else self.for_t(t)
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in rows], dtype=float)


class NashGap(NamedTuple):
    """Per-stage spectral-norm distances to the Nash gains, maximized over players."""

    err_k: np.ndarray
    err_l: np.ndarray

    @property
    def max(self) -> float:
        return float(max(self.err_k.max(initial=0.0), self.err_l.max(initial=0.0)))


def _spec(x: np.ndarray) -> float:
    return float(np.linalg.norm(x, 2))


def _stage_gap(gains: StageGains, nash: StageGains) -> tuple[float, float]:
    err_k = max(_spec(gains.k1 - nash.k1), _spec(gains.k2 - nash.k2))
    err_l = max(_spec(gains.l1 - nash.l1), _spec(gains.l2 - nash.l2))
    return err_k, err_l


def nash_gap(policy: PolicyProfile, oracle: RiccatiSolution) -> NashGap:
    if policy.horizon != oracle.nash_gains.horizon:
        raise ValueError("policy and oracle horizons differ")
    pairs = [_stage_gap(policy.stage(t), oracle.nash_gains.stage(t))
             for t in range(policy.horizon)]
    return NashGap(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


def default_proj_radius_sq(oracle: RiccatiSolution | None) -> float:
    """``4 max_t ||stacked Nash gains||_F^2`` over both players, else 100."""
    if oracle is None or not oracle.ok:
        return FALLBACK_PROJ_RADIUS_SQ
    largest = max(float(np.sum(np.square(stack_player(g, j))))
                  for g in oracle.nash_gains.stages() for j in (1, 2))
    return 4.0 * max(largest, 1e-12)


def _oracle(model: LqMftgModel, oracle: RiccatiSolution | None | bool) -> RiccatiSolution | None:
    if oracle is False:
        return None
    if oracle is None or oracle is True:
        oracle = solve_riccati(model)
    return oracle if oracle.ok else None


def _radius(cfg: RgdaConfig, oracle: RiccatiSolution | None) -> float:
    if cfg.proj_radius_sq is not None:
        return float(cfg.proj_radius_sq)
    return default_proj_radius_sq(oracle)


def _stacked_distance(a: StageGains, b: StageGains) -> float:
    return float(np.sqrt(sum(np.sum(np.square(x - y)) for x, y in zip(a, b))))


def inner_gda(model: LqMftgModel, t: int, future: PolicyProfile | None, cfg: RgdaConfig,
              oracle: RiccatiSolution | None | bool = None, algo: str | None = None,
              record_gains: bool = True) -> tuple[StageGains, list[TraceRow]]:
    """Projected descent-ascent on the stage-``t`` gains, later stages frozen.

    Starts from zero gains. Each iteration first moves ``[K1; L1]`` down the
    gradient, then ``[K2; L2]`` up the gradient evaluated at the updated
    minimizer. ``oracle`` supplies Nash gains for the error columns (``None``
    solves the Riccati recursion, ``False`` disables the columns).
    """
    T, m, p = model.horizon, model.state_dim, model.control_dim
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside [0, {T - 1}]")
    if t < T - 1 and future is None:
        raise ValueError(f"frozen future gains required for t={t} < T-1")
    oracle = _oracle(model, oracle)
    algo = algo or ("ergda" if cfg.gradient_mode == "exact" else "rgda")
    radius_sq = _radius(cfg, oracle)
    cov_y, cov_z = cfg.covariances(m)
    nash = oracle.nash_gains.stage(t) if oracle is not None else None
    try:
        saddle = receding_saddle(model, future, t)
    except np.linalg.LinAlgError:
        saddle = None
    cont = continuation(model, future, t)

    gains = StageGains.zeros(m, p)
    rows: list[TraceRow] = []
    for k in range(cfg.inner_iters):
        start = time.perf_counter()
        eta = cfg.step_size(k)
        if cfg.gradient_mode == "exact":
            g1, _ = exact_gradient(model, gains, future, t, cov_y, cov_z)
            cost = None
        else:
            g1, cost = _zero_order(model, gains, future, t, cov_y, cov_z, cfg, (t, k, 1), 1)
        _check(g1, t, k, "gradient")
        step1 = stack_player(gains, 1) - eta * g1
        new1 = project_ball(step1, radius_sq)
        gains = with_player(gains, 1, new1)
        if cfg.gradient_mode == "exact":
            _, g2 = exact_gradient(model, gains, future, t, cov_y, cov_z)
        else:
            g2, _ = _zero_order(model, gains, future, t, cov_y, cov_z, cfg, (t, k, 2), 2)
        _check(g2, t, k, "gradient")
        step2 = stack_player(gains, 2) + eta * g2
        new2 = project_ball(step2, radius_sq)
        gains = with_player(gains, 2, new2)
        if cost is None:
            cost = receding_cost(model, gains, future, t, cov_y, cov_z, cont)
        _check(np.asarray(cost), t, k, "cost")
        err_k, err_l = _stage_gap(gains, nash) if nash is not None else (None, None)
        grad_norm = float(np.sqrt(np.sum(g1 * g1) + np.sum(g2 * g2)))
        rows.append(TraceRow(
            algo, t, k, float(cost), err_k, err_l, grad_norm,
            bool(new1 is not step1 or new2 is not step2),
            (time.perf_counter() - start) * 1e3, cfg.seed,
            _stacked_distance(gains, saddle) if saddle is not None else None,
            gains if record_gains else None))
        if (cfg.early_stop_tol is not None and cfg.gradient_mode == "exact"
                and grad_norm < cfg.early_stop_tol):
            break
    return gains, rows


def _check(x: np.ndarray, t: int, k: int, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(t, k, what)


def _zero_order(model, gains, future, t, cov_y, cov_z, cfg, key, player):
    """Zero-order estimate for one player; returns it with the mean sampled cost."""
    rng = stream(cfg.seed, 0, *key)
    sim = replace(cfg.sim, seed=cfg.seed)
    seen = []

    def cost_fn(batch):
        cand = with_player(gains, player, batch)
        costs = receding_costs(model, cand, future, t, cov_y, cov_z, sim,
                               (1,) + key + (len(seen),))
        seen.append(costs)
        return costs

    grad = zero_order_gradient(cost_fn, stack_player(gains, player), cfg.smoothing, rng)
    return grad, float(np.mean(seen[0]))


def rgda(model: LqMftgModel, cfg: RgdaConfig, oracle: RiccatiSolution | None | bool = None,
         record_gains: bool = True) -> tuple[PolicyProfile, LearningTrace]:
    """Learn all stage gains backward in time, ``t = T-1, ..., 0``."""
    oracle = _oracle(model, oracle)
    algo = "ergda" if cfg.gradient_mode == "exact" else "rgda"
    T, m, p = model.horizon, model.state_dim, model.control_dim
    policy = PolicyProfile.zeros(T, m, p)
    trace = LearningTrace(algo)
    zero = StageGains.zeros(m, p)
    for t in range(T - 1, -1, -1):
        if oracle is not None:
            trace.initial_err[t] = _stage_gap(zero, oracle.nash_gains.stage(t))
        future = policy if t < T - 1 else None
        gains, rows = inner_gda(model, t, future, cfg, oracle if oracle is not None else False,
                                algo, record_gains)
        policy = policy.with_stage(t, gains)
        trace.rows.extend(rows)
    return policy, trace


def baseline_gda(model: LqMftgModel, cfg: RgdaConfig, oracle: RiccatiSolution | None | bool = None,
                 record_gains: bool = True) -> tuple[PolicyProfile, LearningTrace]:
    """Simultaneous projected descent-ascent on every stage against the full cost.

    Gradients come from :func:`full_horizon_gradient` with the current policy as
    its own continuation; the initial state covariances are the evaluation
    covariances of ``cfg``. Descent on all minimizer gains precedes ascent on all
    maximizer gains, as in :func:`inner_gda`.
    """
    if cfg.gradient_mode != "exact":
        raise ValueError("the baseline learner runs in exact gradient mode only")
    oracle = _oracle(model, oracle)
    T, m, p = model.horizon, model.state_dim, model.control_dim
    radius_sq = _radius(cfg, oracle)
    cov_y, cov_z = cfg.covariances(m)
    policy = PolicyProfile.zeros(T, m, p)
    trace = LearningTrace("baseline")
    if oracle is not None:
        gap = nash_gap(policy, oracle)
        trace.initial_err[-1] = (float(gap.err_k.max()), float(gap.err_l.max()))
    for k in range(cfg.inner_iters):
        start = time.perf_counter()
        eta = cfg.step_size(k)
        projected = False
        sq = 0.0
        grads = full_horizon_gradient(model, policy, cov_y, cov_z)
        stages = []
        for t, (g1, _) in enumerate(grads):
            _check(g1, t, k, "gradient")
            sq += float(np.sum(g1 * g1))
            step = stack_player(policy.stage(t), 1) - eta * g1
            new = project_ball(step, radius_sq)
            projected |= new is not step
            stages.append(with_player(policy.stage(t), 1, new))
        policy = PolicyProfile.from_stages(stages)
        grads = full_horizon_gradient(model, policy, cov_y, cov_z)
        stages = []
        for t, (_, g2) in enumerate(grads):
            _check(g2, t, k, "gradient")
            sq += float(np.sum(g2 * g2))
            step = stack_player(policy.stage(t), 2) + eta * g2
            new = project_ball(step, radius_sq)
            projected |= new is not step
            stages.append(with_player(policy.stage(t), 2, new))
        policy = PolicyProfile.from_stages(stages)
        cost, _ = closed_form_cost(model, policy, cov_y, cov_z)
        _check(np.asarray(cost), -1, k, "cost")
        if oracle is not None:
            gap = nash_gap(policy, oracle)
            err_k, err_l = float(gap.err_k.max()), float(gap.err_l.max())
        else:
            err_k = err_l = None
        grad_norm = float(np.sqrt(sq))
        trace.rows.append(TraceRow(
            "baseline", -1, k, float(cost), err_k, err_l, grad_norm, projected,
            (time.perf_counter() - start) * 1e3, cfg.seed, None,
            policy if record_gains else None))
        if cfg.early_stop_tol is not None and grad_norm < cfg.early_stop_tol:
            break
    return policy, trace


def evaluations_used(trace: LearningTrace, horizon: int) -> int:
    """Gradient evaluations spent: one per row for rgda, ``T`` per baseline row."""
    return len(trace) * (horizon if trace.algo == "baseline" else 1)


def policy_at_budget(trace: LearningTrace, horizon: int, m: int, p: int,
                     budget: int) -> PolicyProfile:
    """The policy a learner held after spending ``budget`` gradient evaluations.

    Needs a trace recorded with gains. Stages an rgda run had not reached yet
    are still at their zero initialization.
    """
    if trace.rows and trace.rows[0].gains is None:
        raise ValueError("trace was recorded without gains")
    if trace.algo == "baseline":
        n = min(budget // horizon, len(trace))
        return trace.rows[n - 1].gains if n > 0 else PolicyProfile.zeros(horizon, m, p)
    policy = PolicyProfile.zeros(horizon, m, p)
    for row in trace.rows[:max(budget, 0)]:
        policy = policy.with_stage(row.t, row.gains)
    return policy
