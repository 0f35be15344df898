"""Exact game solver: coupled Riccati recursions, Nash gains and value,
attenuation-level viability certificates, Lyapunov cost evaluation of
arbitrary linear policies and the finite-population gap constant."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import LqMftgModel, PolicyProfile, StageGains, closed_loop_matrices

__all__ = [
    "FiniteCovariances",
    "MonotonicityWarning",
    "PopulationGapAnalysis",
    "RiccatiSolution",
    "ValueRecursion",
    "Viability",
    "check_viability_finite",
    "check_viability_mf",
    "closed_form_cost",
    "compute_population_gap",
    "find_min_viable_gamma",
    "finite_population_covariances",
    "finite_population_gap",
    "receding_saddle",
    "solve_riccati",
    "value_recursion",
    "viability_margin",
]

SINGULAR_COND = 1e12
COND1_TOL = 1e-10


def _sym(x: np.ndarray) -> np.ndarray:
    return (x + x.T) / 2


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    m_seq: list[np.ndarray]
    m_bar_seq: list[np.ndarray]
    lambda_seq: list[np.ndarray]
    lambda_bar_seq: list[np.ndarray]
    n_seq: np.ndarray
    n_bar_seq: np.ndarray
    nash_gains: PolicyProfile
    nash_value: float
    cond1_holds: bool
    failed_step: int | None = None

    @property
    def ok(self) -> bool:
        return self.failed_step is None


class _Singular(Exception):
    pass


def _riccati_step(a, b, m_next, gamma):
    """One backward step; returns (M_t, Lambda_t, K1, K2)."""
    n = a.shape[0]
    shift = (b @ b.T - gamma**-2 * np.eye(n)) @ m_next
    lam = np.eye(n) + shift
    if not np.all(np.isfinite(lam)):
        raise _Singular
    # relative to the summands, so a near-zero 1x1 Lambda is caught as well
    svals = np.linalg.svd(lam, compute_uv=False)
    if svals.min() * SINGULAR_COND <= max(1.0, np.linalg.norm(shift, 2)):
        raise _Singular
    closed = np.linalg.solve(lam, a)  # Lambda^{-1} A, the Nash closed loop
    mx = m_next @ closed
    return _sym(a.T @ mx), lam, b.T @ mx, gamma**-2 * mx


def _cond1(mats, gamma) -> bool:
    for mat in mats:
        if not np.all(np.isfinite(mat)):
            return False
        gap = gamma**2 * np.eye(mat.shape[0]) - mat
        if np.linalg.eigvalsh(_sym(gap)).min() <= COND1_TOL:
            return False
    return True


def solve_riccati(model: LqMftgModel) -> RiccatiSolution:
    """Backward coupled Riccati recursion for both decoupled games.

    A (near-)singular ``Lambda_t`` aborts the recursion: the returned solution has
    ``cond1_holds=False``, ``failed_step=t`` and NaN in the unreached entries.
    """
    T, m, p, g = model.horizon, model.state_dim, model.control_dim, model.gamma
    nan_mm = np.full((m, m), np.nan)
    ms = [nan_mm] * (T + 1)
    mbs = [nan_mm] * (T + 1)
    lams = [nan_mm] * T
    lambs = [nan_mm] * T
    k1 = [np.full((p, m), np.nan)] * T
    l1 = list(k1)
    k2 = [nan_mm] * T
    l2 = list(k2)
    ns = np.full(T + 1, np.nan)
    nbs = np.full(T + 1, np.nan)
    ms[T], mbs[T] = np.array(model.q[T]), np.array(model.q_bar[T])
    ns[T] = nbs[T] = 0.0
    failed = None
    for t in range(T - 1, -1, -1):
        try:
            ms[t], lams[t], k1[t], k2[t] = _riccati_step(model.a[t], model.b[t], ms[t + 1], g)
            mbs[t], lambs[t], l1[t], l2[t] = _riccati_step(
                model.a_tilde(t), model.b_tilde(t), mbs[t + 1], g)
        except _Singular:
            failed = t
            break
        ms[t] = ms[t] + model.q[t]
        mbs[t] = mbs[t] + model.q_bar[t]
        ns[t] = ns[t + 1] + np.trace(ms[t + 1] @ model.sigma)
        nbs[t] = nbs[t + 1] + np.trace(mbs[t + 1] @ model.sigma_bar)
    gains = PolicyProfile(k1, k2, l1, l2)
    if failed is None:
        value = (np.trace(ms[0] @ model.sigma0) + np.trace(mbs[0] @ model.sigma0_bar)
                 + ns[0] + nbs[0])
        cond1 = _cond1(ms, g) and _cond1(mbs, g)
    else:
        value, cond1 = float("nan"), False
    return RiccatiSolution(ms, mbs, lams, lambs, ns, nbs, gains, float(value), cond1, failed)


# ---------------------------------------------------------------------------
# Lyapunov evaluation of arbitrary linear policies


@dataclass(frozen=True, eq=False)
class ValueRecursion:
    """Value matrices and accumulated noise offsets of a fixed linear policy.

    Entries are indexed by absolute time ``s``; indices below ``start`` are None.
    """

    start: int
    y_mats: list
    z_mats: list
    y_offsets: list
    z_offsets: list

    def y_cost(self, init_cov: np.ndarray, s: int | None = None) -> float:
        s = self.start if s is None else s
        return float(np.trace(self.y_mats[s] @ init_cov) + self.y_offsets[s])

    def z_cost(self, init_cov: np.ndarray, s: int | None = None) -> float:
        s = self.start if s is None else s
        return float(np.trace(self.z_mats[s] @ init_cov) + self.z_offsets[s])


def _stage_weight(q, g1, g2, gamma):
    return q + g1.T @ g1 - gamma**2 * (g2.T @ g2)


def value_recursion(model: LqMftgModel, policy: PolicyProfile, start: int = 0,
                    noise_y: np.ndarray | None = None,
                    noise_z: np.ndarray | None = None) -> ValueRecursion:
    """Lyapunov recursion of the y- and z-costs under ``policy`` from ``start``.

    Process noise defaults to the mean-field model (``sigma`` for y,
    ``sigma_bar`` for z).
    """
    T = model.horizon
    if not 0 <= start <= T:
        raise ValueError(f"start_time {start} outside [0, {T}]")
    wy = model.sigma if noise_y is None else noise_y
    wz = model.sigma_bar if noise_z is None else noise_z
    dev, mean = closed_loop_matrices(model, policy)
    ym = [None] * (T + 1)
    zm = [None] * (T + 1)
    yo = [None] * (T + 1)
    zo = [None] * (T + 1)
    ym[T], zm[T] = np.array(model.q[T]), np.array(model.q_bar[T])
    yo[T] = zo[T] = 0.0
    for s in range(T - 1, start - 1, -1):
        ym[s] = _sym(_stage_weight(model.q[s], policy.k1[s], policy.k2[s], model.gamma)
                     + dev[s].T @ ym[s + 1] @ dev[s])
        zm[s] = _sym(_stage_weight(model.q_bar[s], policy.l1[s], policy.l2[s], model.gamma)
                     + mean[s].T @ zm[s + 1] @ mean[s])
        yo[s] = yo[s + 1] + float(np.trace(ym[s + 1] @ wy))
        zo[s] = zo[s + 1] + float(np.trace(zm[s + 1] @ wz))
    return ValueRecursion(start, ym, zm, yo, zo)


def closed_form_cost(model: LqMftgModel, policy: PolicyProfile, init_y_cov: np.ndarray,
                     init_z_cov: np.ndarray, start_time: int = 0,
                     noise_y: np.ndarray | None = None,
                     noise_z: np.ndarray | None = None) -> tuple[float, ValueRecursion]:
    """Exact expected robust cost from ``start_time`` under a linear policy.

    ``y`` and ``z`` start as zero-mean Gaussians with the given covariances.
    Pass ``noise_y``/``noise_z`` (e.g. from :func:`finite_population_covariances`)
    to evaluate an M-agent system instead of the mean-field limit.
    """
    rec = value_recursion(model, policy, start_time, noise_y, noise_z)
    return rec.y_cost(init_y_cov) + rec.z_cost(init_z_cov), rec


class FiniteCovariances(NamedTuple):
    noise_y: np.ndarray
    noise_z: np.ndarray
    init_y: np.ndarray
    init_z: np.ndarray


def finite_population_covariances(model: LqMftgModel, n_agents: int) -> FiniteCovariances:
    """Per-step and initial covariances of (deviation, empirical mean) with M agents."""
    M = n_agents
    return FiniteCovariances(
        noise_y=(M - 1) / M * model.sigma,
        noise_z=model.sigma_bar + model.sigma / M,
        init_y=(M - 1) / M * model.sigma0,
        init_z=model.sigma0_bar + model.sigma0 / M,
    )


def receding_saddle(model: LqMftgModel, future: PolicyProfile | None, t: int) -> StageGains:
    """Exact saddle of the receding-horizon problem at ``t`` given frozen future gains.

    Uses the continuation value matrices of ``future`` (entries ``s > t``).
    Raises ``np.linalg.LinAlgError`` if the stage problem has no saddle.
    """
    T = model.horizon
    if t == T - 1 or future is None:
        if t != T - 1:
            raise ValueError(f"future gains required for t={t} < T-1")
        py, pz = np.array(model.q[T]), np.array(model.q_bar[T])
    else:
        rec = value_recursion(model, future, t + 1)
        py, pz = rec.y_mats[t + 1], rec.z_mats[t + 1]
    try:
        _, _, k1, k2 = _riccati_step(model.a[t], model.b[t], py, model.gamma)
        _, _, l1, l2 = _riccati_step(model.a_tilde(t), model.b_tilde(t), pz, model.gamma)
    except _Singular:
        raise np.linalg.LinAlgError(f"singular stage problem at t={t}") from None
    return StageGains(k1, k2, l1, l2)


# ---------------------------------------------------------------------------
# viability


class Viability(NamedTuple):
    viable: bool
    margin: float


def viability_margin(model: LqMftgModel, sol: RiccatiSolution) -> float:
    """``sum_{t=1..T} tr((M_t - g^2 I) S + (Mbar_t - g^2 I) Sbar) + tr(M_0 S0) + tr(Mbar_0 Sbar0)``."""
    g2I = model.gamma**2 * np.eye(model.state_dim)
    total = 0.0
    for t in range(1, model.horizon + 1):
        total += np.trace((sol.m_seq[t] - g2I) @ model.sigma)
        total += np.trace((sol.m_bar_seq[t] - g2I) @ model.sigma_bar)
    total += np.trace(sol.m_seq[0] @ model.sigma0) + np.trace(sol.m_bar_seq[0] @ model.sigma0_bar)
    return float(total)


def check_viability_mf(model: LqMftgModel, sol: RiccatiSolution) -> Viability:
    """Mean-field viability of ``model.gamma``: cond1 and a non-positive margin."""
    margin = viability_margin(model, sol)
    return Viability(bool(sol.cond1_holds and margin <= 0), margin)


@dataclass(frozen=True, eq=False)
class PopulationGapAnalysis:
    psi: np.ndarray
    psi_bar: np.ndarray
    c1: float
    sigma_f: float
    horizon: int

    @property
    def constant(self) -> float:
        """The constant ``C = C1 * ||Sigma||_F`` of the finite-population condition."""
        return self.c1 * self.sigma_f

    def gap_bound(self, n_agents: int) -> float:
        return self.c1 * self.sigma_f * self.horizon / n_agents


def check_viability_finite(model: LqMftgModel, sol: RiccatiSolution,
                           gap: PopulationGapAnalysis, n_agents: int) -> Viability:
    """Finite-population (N agents) viability: margin must be <= -C T / N."""
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    shift = gap.constant * model.horizon / n_agents
    margin = viability_margin(model, sol) + shift
    return Viability(bool(sol.cond1_holds and margin <= 0), margin)


def _noise_to_state(loops: list[np.ndarray]) -> np.ndarray:
    T = len(loops)
    m = loops[0].shape[0]
    psi = np.zeros(((T + 1) * m, (T + 1) * m))
    for s in range(T + 1):
        prod = np.eye(m)
        psi[s * m:(s + 1) * m, s * m:(s + 1) * m] = prod
        for t in range(s + 1, T + 1):
            prod = loops[t - 1] @ prod
            psi[t * m:(t + 1) * m, s * m:(s + 1) * m] = prod
    return psi


def _block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def compute_population_gap(model: LqMftgModel, policy: PolicyProfile) -> PopulationGapAnalysis:
    """Noise-to-state operators of ``policy`` and the population-gap constant C1.

    ``|J_M - J_inf| <= C1 * ||Sigma||_F * T / M`` for the M-agent system.
    """
    dev, mean = closed_loop_matrices(model, policy)
    T, g = model.horizon, model.gamma
    psi, psi_bar = _noise_to_state(dev), _noise_to_state(mean)
    q_hat = _block_diag([_stage_weight(model.q[t], policy.k1[t], policy.k2[t], g)
                         for t in range(T)] + [np.asarray(model.q[T])])
    qb_hat = _block_diag([_stage_weight(model.q_bar[t], policy.l1[t], policy.l2[t], g)
                          for t in range(T)] + [np.asarray(model.q_bar[T])])
    c1 = (np.linalg.norm(psi.T @ q_hat @ psi, "fro")
          + np.linalg.norm(psi_bar.T @ qb_hat @ psi_bar, "fro"))
    return PopulationGapAnalysis(psi, psi_bar, float(c1),
                                 float(np.linalg.norm(model.sigma, "fro")), T)


def finite_population_gap(model: LqMftgModel, sol: RiccatiSolution,
                          c1_override: float | None = None) -> PopulationGapAnalysis:
    """Gap analysis used by the finite-population certificate.

    Takes the larger C1 of the Nash policy and the zero policy; ``c1_override``
    replaces the constant outright.
    """
    at_nash = compute_population_gap(model, sol.nash_gains)
    at_zero = compute_population_gap(
        model, PolicyProfile.zeros(model.horizon, model.state_dim, model.control_dim))
    best = at_nash if at_nash.c1 >= at_zero.c1 else at_zero
    if c1_override is not None:
        best = PopulationGapAnalysis(best.psi, best.psi_bar, float(c1_override),
                                     best.sigma_f, best.horizon)
    return best


class MonotonicityWarning(RuntimeWarning):
    """Viability was observed to be non-monotone in gamma during bisection."""


def _viable_at(model: LqMftgModel, gamma: float, n_agents: int | None,
               c1_override: float | None) -> bool:
    mg = model.with_gamma(gamma)
    sol = solve_riccati(mg)
    if not sol.cond1_holds:
        return False
    if n_agents is None:
        return check_viability_mf(mg, sol).viable
    gap = finite_population_gap(mg, sol, c1_override)
    return check_viability_finite(mg, sol, gap, n_agents).viable


def find_min_viable_gamma(model: LqMftgModel, lo: float, hi: float, tol: float,
                          n_agents: int | None = None,
                          c1_override: float | None = None) -> float | None:
    """Bisect for the smallest viable attenuation level in ``[lo, hi]``.

    ``n_agents=None`` uses the mean-field certificate, otherwise the N-agent one.
    Returns a viable gamma within ``tol`` above the boundary, ``lo`` if ``lo`` is
    already viable, or None when ``hi`` is not viable. Emits
    :class:`MonotonicityWarning` if the evaluated points contradict monotonicity.
    """
    if not (0 < lo < hi) or tol <= 0:
        raise ValueError(f"invalid bracket lo={lo}, hi={hi}, tol={tol}")
    seen: list[tuple[float, bool]] = []

    def probe(g):
        ok = _viable_at(model, g, n_agents, c1_override)
        seen.append((g, ok))
        return ok

    if not probe(hi):
        return None
    if probe(lo):
        result = lo
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if probe(mid):
                hi = mid
            else:
                lo = mid
        result = hi
    seen.sort()
    flags = [ok for _, ok in seen]
    if any(a and not b for a, b in zip(flags, flags[1:])):
        warnings.warn("viability is not monotone in gamma on the evaluated points",
                      MonotonicityWarning, stacklevel=2)
    return result
