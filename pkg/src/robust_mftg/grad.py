"""Policy gradients of the receding-horizon cost.

Each player's stage gains are stacked vertically, ``[K1; L1]`` (``2p x m``) for
the minimizer and ``[K2; L2]`` (``2m x m``) for the maximizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import LqMftgModel, PolicyProfile, StageGains, closed_loop_matrices
from .riccati import value_recursion

__all__ = [
    "SmoothingParams",
    "continuation",
    "exact_gradient",
    "full_horizon_gradient",
    "project_ball",
    "receding_cost",
    "sample_sphere",
    "stack_player",
    "unstack_player",
    "with_player",
    "zero_order_gradient",
]


def stack_player(gains: StageGains, player: int) -> np.ndarray:
    if player == 1:
        return np.vstack([gains.k1, gains.l1])
    if player == 2:
        return np.vstack([gains.k2, gains.l2])
    raise ValueError(f"player must be 1 or 2, got {player}")


def unstack_player(stacked: np.ndarray, player: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``[K; L]`` back into ``(K, L)``; works on batches along axis 0 too."""
    if player not in (1, 2):
        raise ValueError(f"player must be 1 or 2, got {player}")
    rows = stacked.shape[-2] // 2
    return stacked[..., :rows, :], stacked[..., rows:, :]


def with_player(gains: StageGains, player: int, stacked: np.ndarray) -> StageGains:
    k, l = unstack_player(stacked, player)
    if player == 1:
        return gains._replace(k1=k, l1=l)
    return gains._replace(k2=k, l2=l)


@dataclass(frozen=True)
class SmoothingParams:
    """Sphere radius ``r`` and mini-batch size ``N_b`` of the zero-order estimator.

    ``baseline`` subtracts the unperturbed cost; ``antithetic`` draws directions
    in ``(e, -e)`` pairs. Both are variance reduction only and default off.
    """

    radius: float
    batch: int
    baseline: bool = False
    antithetic: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("smoothing radius must be positive")
        if self.batch < 1:
            raise ValueError("mini-batch size must be >= 1")
        if self.antithetic and self.batch % 2:
            raise ValueError("antithetic sampling needs an even mini-batch size")


def continuation(model: LqMftgModel, future: PolicyProfile | None, t: int):
    """Value matrices and noise offsets at ``t + 1`` of the frozen future gains.

    Returns ``(P_y, P_z, offset_y, offset_z)``; at ``t = T - 1`` these are the
    terminal weights and zero offsets.
    """
    T = model.horizon
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside [0, {T - 1}]")
    if t == T - 1:
        return np.asarray(model.q[T]), np.asarray(model.q_bar[T]), 0.0, 0.0
    if future is None:
        raise ValueError(f"frozen future gains required for t={t} < T-1")
    rec = value_recursion(model, future, t + 1)
    return rec.y_mats[t + 1], rec.z_mats[t + 1], rec.y_offsets[t + 1], rec.z_offsets[t + 1]


def _tp(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _tr(mats: np.ndarray, cov: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,ji->...", mats, cov)


def receding_cost(model: LqMftgModel, gains: StageGains, future: PolicyProfile | None, t: int,
                  cov_y: np.ndarray, cov_z: np.ndarray, cont=None) -> np.ndarray | float:
    """Exact receding-horizon cost at ``t`` of (possibly batched) stage gains.

    Gains with a leading batch axis give one cost per candidate. ``cont`` may
    pass a precomputed :func:`continuation`.
    """
    py, pz, oy, oz = continuation(model, future, t) if cont is None else cont
    g = model.gamma
    k1, k2, l1, l2 = gains
    f = model.a[t] - model.b[t] @ k1 + k2
    h = model.a_tilde(t) - model.b_tilde(t) @ l1 + l2
    wy = model.q[t] + _tp(k1) @ k1 - g**2 * (_tp(k2) @ k2) + _tp(f) @ py @ f
    wz = model.q_bar[t] + _tp(l1) @ l1 - g**2 * (_tp(l2) @ l2) + _tp(h) @ pz @ h
    cost = (_tr(wy, cov_y) + _tr(wz, cov_z) + np.trace(py @ model.sigma)
            + np.trace(pz @ model.sigma_bar) + oy + oz)
    return float(cost) if np.ndim(cost) == 0 else cost


def _stage_grads(a, b, p_next, g1, g2, gamma, cov):
    # d/dG1 and d/dG2 of tr[(G1'G1 - gamma^2 G2'G2 + F' P F) cov], F = A - B G1 + G2
    f = a - b @ g1 + g2
    d1 = 2 * (g1 - b.T @ p_next @ f) @ cov
    d2 = 2 * (-gamma**2 * g2 + p_next @ f) @ cov
    return d1, d2


def exact_gradient(model: LqMftgModel, gains: StageGains, future: PolicyProfile | None,
                   t: int, cov_y: np.ndarray, cov_z: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of the receding-horizon cost at ``t``.

    Returns the stacked gradients w.r.t. ``[K1; L1]`` and ``[K2; L2]``. Gains in
    ``future`` at times ``s > t`` are held fixed; ``y_t ~ N(0, cov_y)`` and
    ``z_t ~ N(0, cov_z)``.
    """
    py, pz, _, _ = continuation(model, future, t)
    g = model.gamma
    dk1, dk2 = _stage_grads(model.a[t], model.b[t], py, gains.k1, gains.k2, g, cov_y)
    dl1, dl2 = _stage_grads(model.a_tilde(t), model.b_tilde(t), pz, gains.l1, gains.l2, g, cov_z)
    return np.vstack([dk1, dl1]), np.vstack([dk2, dl2])


def full_horizon_gradient(model: LqMftgModel, policy: PolicyProfile, init_cov_y: np.ndarray,
                          init_cov_z: np.ndarray, noise_y: np.ndarray | None = None,
                          noise_z: np.ndarray | None = None
                          ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of the full-horizon cost w.r.t. every stage's gains.

    Continuation values come from the current policy itself and each stage is
    weighted by the state covariance the policy induces at that time.
    """
    T = model.horizon
    wy = model.sigma if noise_y is None else noise_y
    wz = model.sigma_bar if noise_z is None else noise_z
    rec = value_recursion(model, policy, 0, wy, wz)
    dev, mean = closed_loop_matrices(model, policy)
    xy, xz = np.asarray(init_cov_y, float), np.asarray(init_cov_z, float)
    out = []
    for t in range(T):
        dk1, dk2 = _stage_grads(model.a[t], model.b[t], rec.y_mats[t + 1],
                                policy.k1[t], policy.k2[t], model.gamma, xy)
        dl1, dl2 = _stage_grads(model.a_tilde(t), model.b_tilde(t), rec.z_mats[t + 1],
                                policy.l1[t], policy.l2[t], model.gamma, xz)
        out.append((np.vstack([dk1, dl1]), np.vstack([dk2, dl2])))
        xy = dev[t] @ xy @ dev[t].T + wy
        xz = mean[t] @ xz @ mean[t].T + wz
    return out


def sample_sphere(rng: np.random.Generator, count: int, shape: tuple[int, ...],
                  radius: float, antithetic: bool = False) -> np.ndarray:
    """``count`` i.i.d. uniform points on the radius-``radius`` sphere in R^n."""
    n = int(np.prod(shape))
    draws = count // 2 if antithetic else count
    u = rng.standard_normal((draws, n))
    u *= radius / np.linalg.norm(u, axis=1, keepdims=True)
    if antithetic:
        u = np.concatenate([u, -u])
    return u.reshape((count,) + tuple(shape))


def zero_order_gradient(cost_fn: Callable[[np.ndarray], np.ndarray], base: np.ndarray,
                        smoothing: SmoothingParams, rng: np.random.Generator) -> np.ndarray:
    """One-point zero-order gradient estimate ``n/(N_b r^2) sum_j J(base + e_j) e_j``.

    ``cost_fn`` maps a batch of perturbed gains ``(N, *base.shape)`` to costs
    ``(N,)``; it may be a Monte-Carlo estimate.
    """
    base = np.asarray(base, dtype=float)
    r, nb = smoothing.radius, smoothing.batch
    e = sample_sphere(rng, nb, base.shape, r, smoothing.antithetic)
    costs = np.asarray(cost_fn(base[None] + e), dtype=float)
    if smoothing.baseline:
        costs = costs - float(np.asarray(cost_fn(base[None]))[0])
    n = base.size
    return n / (nb * r**2) * np.tensordot(costs, e, axes=1)


def project_ball(gain: np.ndarray, radius_sq: float) -> np.ndarray:
    """Radial projection onto ``{G : ||G||_F^2 <= radius_sq}``."""
    if radius_sq <= 0:
        raise ValueError("projection radius must be positive")
    with np.errstate(over="ignore"):
        norm_sq = float(np.sum(np.square(gain)))
    if norm_sq <= radius_sq:
        return gain
    if not np.isfinite(norm_sq):
        # rescale first so a huge (but finite) gain is not mapped to zero
        big = float(np.max(np.abs(gain)))
        if not np.isfinite(big):
            return gain * np.nan
        unit = gain / big
        return unit * np.sqrt(radius_sq / float(np.sum(np.square(unit))))
    return gain * np.sqrt(radius_sq / norm_sq)
