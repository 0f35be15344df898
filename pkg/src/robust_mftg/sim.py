"""Finite-population Monte-Carlo simulator.

M agents share the empirical mean ``z~_t = mean_i x^i_t``; agent ``i`` moves by

    x^i_{t+1} = F_t (x^i_t - z~_t) + G_t z~_t + w^i_t + wbar_t

with ``F_t = A_t - B_t K1_t + K2_t``, ``G_t = Atilde_t - Btilde_t L1_t + L2_t``,
``w^i ~ N(0, Sigma)`` per agent and ``wbar ~ N(0, Sigmabar)`` shared.

The receding-horizon cost depends on the agents only through the centred
second-moment matrix of each agent's stacked (initial deviation, deviation
noises) vector, which is Wishart with M - 1 degrees of freedom, and the
empirical-mean noise, which is independent of it. ``method="moments"`` samples
those statistics directly: the same distribution as ``method="agents"`` at a
cost independent of M.

Rollouts are split into fixed-size chunks; chunk ``c`` draws from its own
Philox stream keyed by ``(seed, c)``, so results do not depend on how many
worker threads run the chunks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import LqMftgModel, PolicyProfile, StageGains

__all__ = [
    "CostReport",
    "PopulationState",
    "SimConfig",
    "cov_factor",
    "initial_population",
    "population_gap_estimate",
    "receding_cost_batch",
    "receding_costs",
    "receding_horizon_cost",
    "rollout_cost",
    "step_population",
    "stream",
]

THREADS_ENV = "ROBUST_MFTG_THREADS"
METHODS = ("agents", "moments")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def cov_factor(cov: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = cov``; small negative eigenvalues are clipped to 0."""
    cov = np.asarray(cov, dtype=float)
    w, v = np.linalg.eigh((cov + cov.T) / 2)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -1e-12 * scale:
        raise ValueError("covariance is not positive semi-definite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def resolve_threads(requested: int | None = None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, int(requested or 1))


@dataclass(frozen=True)
class SimConfig:
    n_agents: int
    n_rollouts: int = 1
    seed: int = 0
    antithetic: bool = False
    chunk_size: int = 2048
    threads: int | None = None
    method: str = "agents"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_agents < 2:
            raise ValueError("n_agents must be >= 2")
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")
        if self.antithetic and (self.chunk_size % 2 or self.n_rollouts % 2):
            raise ValueError("antithetic sampling needs even n_rollouts and chunk_size")


@dataclass(frozen=True, eq=False)
class PopulationState:
    states: np.ndarray
    time: int
    empirical_mean: np.ndarray = field(init=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 2:
            raise ValueError("states must be an (M, m) array with M >= 2")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "empirical_mean", states.mean(axis=0))

    @property
    def deviations(self) -> np.ndarray:
        return self.states - self.empirical_mean


@dataclass(frozen=True)
class CostReport:
    total: float
    y_part: float
    z_part: float
    std_error: float
    n_rollouts: int = 0


def step_population(state: PopulationState, gains: StageGains, model: LqMftgModel,
                    rng: np.random.Generator) -> PopulationState:
    """Advance every agent one step under the stage gains at ``state.time``."""
    t = state.time
    if not 0 <= t < model.horizon:
        raise ValueError(f"cannot step from t={t} (horizon {model.horizon})")
    f = model.a[t] - model.b[t] @ gains.k1 + gains.k2
    g = model.a_tilde(t) - model.b_tilde(t) @ gains.l1 + gains.l2
    M, m = state.states.shape
    w = rng.standard_normal((M, m)) @ cov_factor(model.sigma).T
    wbar = cov_factor(model.sigma_bar) @ rng.standard_normal(m)
    nxt = state.deviations @ f.T + g @ state.empirical_mean + wbar + w
    return PopulationState(nxt, t + 1)


def initial_population(model: LqMftgModel, n_agents: int,
                       rng: np.random.Generator) -> PopulationState:
    """``x^i_0 = w0^i + wbar0`` with ``w0^i ~ N(0, Sigma0)``, ``wbar0 ~ N(0, Sigma0bar)``."""
    m = model.state_dim
    x = (rng.standard_normal((n_agents, m)) @ cov_factor(model.sigma0).T
         + cov_factor(model.sigma0_bar) @ rng.standard_normal(m))
    return PopulationState(x, 0)


# ---------------------------------------------------------------------------
# vectorized kernel: axis 0 indexes independent rollouts


class _Noise:
    """Standard normals along a leading rollout axis.

    With ``antithetic`` the second half of the rollouts mirrors the first:
    agent-level (individual) draws are negated, common draws are repeated.
    Each rollout keeps the correct law, and the odd cross terms between
    common and individual noise cancel within a pair.
    """

    def __init__(self, rng: np.random.Generator, antithetic: bool):
        self.rng = rng
        self.antithetic = antithetic

    def _draw(self, shape, sign):
        if not self.antithetic:
            return self.rng.standard_normal(shape)
        half = self.rng.standard_normal((shape[0] // 2,) + tuple(shape[1:]))
        return np.concatenate([half, sign * half])

    def individual(self, shape: tuple[int, ...]) -> np.ndarray:
        return self._draw(shape, -1.0)

    def common(self, shape: tuple[int, ...]) -> np.ndarray:
        return self._draw(shape, 1.0)


def _apply(mat: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Apply a (batched) matrix to vectors of shape (N, m) or (N, M, m)."""
    if mat.ndim == 2:
        return vecs @ mat.T
    if vecs.ndim == 2:
        return np.einsum("nij,nj->ni", mat, vecs)
    return np.einsum("nij,naj->nai", mat, vecs)


def _quad(z: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """``z_n^T W z_n`` per rollout for a shared or per-rollout weight."""
    if weight.ndim == 2:
        return np.einsum("ni,ij,nj->n", z, weight, z)
    return np.einsum("ni,nij,nj->n", z, weight, z)


def _weight(q, g1, g2, gamma):
    return q + np.swapaxes(g1, -1, -2) @ g1 - gamma**2 * (np.swapaxes(g2, -1, -2) @ g2)


def _propagate(model: LqMftgModel, t0: int, first: StageGains, future: PolicyProfile | None,
               y: np.ndarray, z: np.ndarray, noise: _Noise):
    """Run deviations ``y`` (N, M, m) and means ``z`` (N, m) from ``t0`` to T.

    Returns per-rollout agent-averaged y-costs and z-costs.
    """
    T, gamma = model.horizon, model.gamma
    n, M, m = y.shape
    lw, lwb = cov_factor(model.sigma), cov_factor(model.sigma_bar)
    ycost = np.zeros(n)
    zcost = np.zeros(n)
    for s in range(t0, T):
        k1, k2, l1, l2 = first if s == t0 else future.stage(s)
        sy = _weight(model.q[s], k1, k2, gamma)
        sz = _weight(model.q_bar[s], l1, l2, gamma)
        second = np.einsum("nai,naj->nij", y, y) / M
        ycost += np.sum(sy * second, axis=(-2, -1))
        zcost += _quad(z, sz)
        f = model.a[s] - model.b[s] @ k1 + k2
        g = model.a_tilde(s) - model.b_tilde(s) @ l1 + l2
        x = _apply(f, y) + (_apply(g, z) + noise.common((n, m)) @ lwb.T)[:, None, :]
        x += noise.individual((n, M, m)) @ lw.T
        z = x.mean(axis=1)
        y = x - z[:, None, :]
    second = np.einsum("nai,naj->nij", y, y) / M
    ycost += np.sum(np.asarray(model.q[T]) * second, axis=(-2, -1))
    zcost += _quad(z, np.asarray(model.q_bar[T]))
    return ycost, zcost


def receding_cost_batch(model: LqMftgModel, gains: StageGains, future: PolicyProfile | None,
                        t: int, cov_y: np.ndarray, cov_z: np.ndarray, n_agents: int,
                        rng: np.random.Generator, antithetic: bool = False,
                        n: int | None = None, method: str = "agents"
                        ) -> tuple[np.ndarray, np.ndarray]:
    """One M-agent rollout of the receding-horizon cost per batch element.

    ``gains`` may carry a leading batch axis (e.g. perturbed candidates); each
    element gets its own fresh rollout. At time ``t`` the deviations are drawn
    with marginal covariance ``cov_y`` (centred so they sum to zero) and the mean
    with covariance ``cov_z``. Returns ``(y_costs, z_costs)``.
    """
    T = model.horizon
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside [0, {T - 1}]")
    if t < T - 1 and future is None:
        raise ValueError(f"frozen future gains required for t={t} < T-1")
    if n is None:
        n = max((g.shape[0] for g in gains if g.ndim == 3), default=1)
    M, m = n_agents, model.state_dim
    noise = _Noise(rng, antithetic)
    if method == "moments":
        return _moment_batch(model, gains, future, t, cov_y, cov_z, M, n, noise)
    if method != "agents":
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    u = noise.individual((n, M, m)) @ cov_factor(cov_y).T
    y = np.sqrt(M / (M - 1)) * (u - u.mean(axis=1, keepdims=True))
    z = noise.common((n, m)) @ cov_factor(cov_z).T
    return _propagate(model, t, gains, future, y, z, noise)


def _centred_wishart(rng: np.random.Generator, df: int, d: int, n: int) -> np.ndarray:
    """``n`` draws of ``sum_i g_i g_i^T`` over ``df`` i.i.d. ``g_i ~ N(0, I_d)``.

    Bartlett decomposition when ``df >= d``, batched over draws.
    """
    if df < d:
        g = rng.standard_normal((n, df, d))
        return np.einsum("nki,nkj->nij", g, g)
    low = np.zeros((n, d, d))
    rows, cols = np.tril_indices(d, -1)
    low[:, rows, cols] = rng.standard_normal((n, rows.size))
    idx = np.arange(d)
    low[:, idx, idx] = np.sqrt(rng.chisquare(df - idx, size=(n, d)))
    return low @ np.swapaxes(low, -1, -2)


def _moment_batch(model, gains, future, t, cov_y, cov_z, M, n, noise):
    T, m, gamma = model.horizon, model.state_dim, model.gamma
    steps = T - t
    d = m * (steps + 1)
    # agent-averaged second moment of v_i = (y_t^i, wdev_t^i, ..., wdev_{T-1}^i)
    scale = np.zeros((d, d))
    scale[:m, :m] = np.sqrt(M / (M - 1)) * cov_factor(cov_y)
    lw = cov_factor(model.sigma)
    for j in range(steps):
        scale[m * (j + 1):m * (j + 2), m * (j + 1):m * (j + 2)] = lw
    if noise.antithetic:  # negating agent noise leaves the centred moments unchanged
        w = _centred_wishart(noise.rng, M - 1, d, n // 2)
        w = np.concatenate([w, w])
    else:
        w = _centred_wishart(noise.rng, M - 1, d, n)
    v = scale @ w @ scale.T / M
    lwb, lwm = cov_factor(model.sigma_bar), lw / np.sqrt(M)
    phi = np.zeros((m, d))
    phi[:, :m] = np.eye(m)
    z = noise.common((n, m)) @ cov_factor(cov_z).T
    ycost = np.zeros(n)
    zcost = np.zeros(n)
    for s in range(t, T):
        k1, k2, l1, l2 = gains if s == t else future.stage(s)
        sy = _weight(model.q[s], k1, k2, gamma)
        sz = _weight(model.q_bar[s], l1, l2, gamma)
        second = phi @ v @ np.swapaxes(phi, -1, -2)
        ycost += np.sum(sy * second, axis=(-2, -1))
        zcost += _quad(z, sz)
        f = model.a[s] - model.b[s] @ k1 + k2
        g = model.a_tilde(s) - model.b_tilde(s) @ l1 + l2
        phi = f @ phi
        phi[..., m * (s - t + 1):m * (s - t + 2)] += np.eye(m)
        # common noise plus the mean of the agent noises, independent of v
        z = _apply(g, z) + noise.common((n, m)) @ lwb.T + noise.individual((n, m)) @ lwm.T
    second = phi @ v @ np.swapaxes(phi, -1, -2)
    ycost += np.sum(np.asarray(model.q[T]) * second, axis=(-2, -1))
    zcost += _quad(z, np.asarray(model.q_bar[T]))
    return ycost, zcost


def _run_chunks(fn: Callable[[int, int], tuple[np.ndarray, ...]], total: int,
                chunk: int, threads: int | None) -> list[np.ndarray]:
    sizes = [min(chunk, total - i) for i in range(0, total, chunk)]
    workers = resolve_threads(threads)
    if workers == 1 or len(sizes) == 1:
        parts = [fn(c, s) for c, s in enumerate(sizes)]
    else:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(fn, range(len(sizes)), sizes))
    return [np.concatenate(col) for col in zip(*parts)]


def _paired(fn, antithetic: bool):
    """Wrap a chunk function to also return the independent units for the error bar."""

    def wrapped(c, size):
        ycosts, zcosts = fn(c, size)
        totals = ycosts + zcosts
        if antithetic:
            totals = 0.5 * (totals[:size // 2] + totals[size // 2:])
        return ycosts, zcosts, totals

    return wrapped


def _report(ycosts: np.ndarray, zcosts: np.ndarray, units: np.ndarray) -> CostReport:
    n = units.size
    se = float(units.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    y, z = float(ycosts.mean()), float(zcosts.mean())
    return CostReport(y + z, y, z, se, ycosts.size)


def rollout_cost(model: LqMftgModel, policy: PolicyProfile, sim: SimConfig) -> CostReport:
    """Monte-Carlo estimate of the agent-averaged M-agent cost from t = 0."""
    M, m = sim.n_agents, model.state_dim
    l0, l0b = cov_factor(model.sigma0), cov_factor(model.sigma0_bar)

    def chunk(c, size):
        noise = _Noise(stream(sim.seed, 0, c), sim.antithetic)
        x = noise.individual((size, M, m)) @ l0.T + (noise.common((size, m)) @ l0b.T)[:, None, :]
        z = x.mean(axis=1)
        return _propagate(model, 0, policy.stage(0), policy, x - z[:, None, :], z, noise)

    parts = _run_chunks(_paired(chunk, sim.antithetic), sim.n_rollouts, sim.chunk_size,
                        sim.threads)
    return _report(*parts)


def receding_horizon_cost(model: LqMftgModel, gains: StageGains, future: PolicyProfile | None,
                          t: int, eval_cov_y: np.ndarray, eval_cov_z: np.ndarray,
                          sim: SimConfig) -> CostReport:
    """Monte-Carlo estimate of the receding-horizon cost at ``t``.

    Stage ``t`` uses ``gains``; stages ``s > t`` use ``future`` (required unless
    ``t = T - 1``).
    """

    def chunk(c, size):
        return receding_cost_batch(model, gains, future, t, eval_cov_y, eval_cov_z,
                                   sim.n_agents, stream(sim.seed, 1, t, c), sim.antithetic,
                                   n=size, method=sim.method)

    parts = _run_chunks(_paired(chunk, sim.antithetic), sim.n_rollouts, sim.chunk_size,
                        sim.threads)
    return _report(*parts)


def receding_costs(model: LqMftgModel, gains: StageGains, future: PolicyProfile | None,
                   t: int, eval_cov_y: np.ndarray, eval_cov_z: np.ndarray, sim: SimConfig,
                   key: tuple[int, ...] = ()) -> np.ndarray:
    """Receding-horizon cost of every candidate in a batch of stage gains.

    Each candidate is scored by the mean of ``sim.n_rollouts`` independent
    M-agent rollouts. The batch is cut into fixed-size chunks with their own
    streams ``(sim.seed, *key, chunk)``, so the result does not depend on the
    worker count.
    """
    n = max((g.shape[0] for g in gains if g.ndim == 3), default=1)
    reps = sim.n_rollouts
    expanded = StageGains(*(np.repeat(g, reps, axis=0) if g.ndim == 3 else g for g in gains))

    def chunk(c, size):
        lo = c * sim.chunk_size
        part = StageGains(*(g[lo:lo + size] if g.ndim == 3 else g for g in expanded))
        return receding_cost_batch(model, part, future, t, eval_cov_y, eval_cov_z,
                                   sim.n_agents, stream(sim.seed, *key, c), sim.antithetic,
                                   n=size, method=sim.method)

    ycosts, zcosts = _run_chunks(chunk, n * reps, sim.chunk_size, sim.threads)
    return (ycosts + zcosts).reshape(n, reps).mean(axis=1)


def population_gap_estimate(model: LqMftgModel, policy: PolicyProfile, n_agents: int,
                            n_rollouts: int, seed: int = 0, chunk_size: int = 2048,
                            threads: int | None = None, antithetic: bool = True
                            ) -> tuple[float, float]:
    """Estimate ``J_M - J_inf`` under ``policy`` with common random numbers.

    Each rollout drives the M-agent system and M copies of the mean-field
    limit (exact conditional mean, per-agent deviations) with the same noise;
    the mean of the paired differences is unbiased for the population gap.
    Antithetic pairs (agent noise negated, common noise shared) remove the
    O(1/sqrt(M)) cross term between the mean field and the agents' average
    noise. Returns ``(estimate, std_error)``; the standard error is computed
    over independent pairs when ``antithetic``.
    """
    if antithetic and (n_rollouts % 2 or chunk_size % 2):
        raise ValueError("antithetic sampling needs even n_rollouts and chunk_size")
    T, M, m, gamma = model.horizon, n_agents, model.state_dim, model.gamma
    lw, lwb = cov_factor(model.sigma), cov_factor(model.sigma_bar)
    l0, l0b = cov_factor(model.sigma0), cov_factor(model.sigma0_bar)

    def chunk(c, n):
        noise = _Noise(stream(seed, 2, c), antithetic)
        w0 = noise.individual((n, M, m)) @ l0.T
        wb0 = noise.common((n, m)) @ l0b.T
        x = w0 + wb0[:, None, :]
        zf = x.mean(axis=1)
        yf = x - zf[:, None, :]
        yi, zi = w0, wb0  # mean-field limit: deviation w0^i, mean wbar0
        diff = np.zeros(n)
        for s in range(T + 1):
            if s < T:
                k1, k2, l1, l2 = policy.stage(s)
                sy = _weight(model.q[s], k1, k2, gamma)
                sz = _weight(model.q_bar[s], l1, l2, gamma)
            else:
                sy, sz = np.asarray(model.q[T]), np.asarray(model.q_bar[T])
            diff += np.sum(sy * (np.einsum("nai,naj->nij", yf, yf)
                                 - np.einsum("nai,naj->nij", yi, yi)), axis=(-2, -1)) / M
            diff += np.einsum("ni,ij,nj->n", zf, sz, zf) - np.einsum("ni,ij,nj->n", zi, sz, zi)
            if s == T:
                break
            f = model.a[s] - model.b[s] @ k1 + k2
            g = model.a_tilde(s) - model.b_tilde(s) @ l1 + l2
            w = noise.individual((n, M, m)) @ lw.T
            wb = noise.common((n, m)) @ lwb.T
            x = yf @ f.T + (zf @ g.T + wb)[:, None, :] + w
            zf = x.mean(axis=1)
            yf = x - zf[:, None, :]
            yi = yi @ f.T + w
            zi = zi @ g.T + wb
        if antithetic:
            diff = 0.5 * (diff[:n // 2] + diff[n // 2:])
        return (diff,)

    (diffs,) = _run_chunks(chunk, n_rollouts, chunk_size, threads)
    return float(diffs.mean()), float(diffs.std(ddof=1) / np.sqrt(diffs.size))
