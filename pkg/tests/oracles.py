"""Independent reference computations used by the tests.

Nothing here calls the package's Riccati or value recursions: costs are
propagated forward through state covariances, and saddles are found by
solving the first-order conditions of a brute-force quadratic fit.
"""

from __future__ import annotations

import numpy as np

from robust_mftg.model import LqMftgModel, StageGains


def forward_cost(model: LqMftgModel, k1, k2, l1, l2, start: int, cov_y, cov_z,
                 noise_y=None, noise_z=None) -> float:
    """Expected cost from ``start`` by forward covariance propagation.

    ``k1`` etc. are full-length lists of stage gains (entries before ``start``
    are ignored).
    """
    T, g = model.horizon, model.gamma
    wy = model.sigma if noise_y is None else noise_y
    wz = model.sigma_bar if noise_z is None else noise_z
    ys, zs = np.array(cov_y, float), np.array(cov_z, float)
    total = 0.0
    for s in range(start, T):
        total += np.trace((model.q[s] + k1[s].T @ k1[s] - g**2 * k2[s].T @ k2[s]) @ ys)
        total += np.trace((model.q_bar[s] + l1[s].T @ l1[s] - g**2 * l2[s].T @ l2[s]) @ zs)
        f = model.a[s] - model.b[s] @ k1[s] + k2[s]
        h = (model.a[s] + model.a_bar[s]) - (model.b[s] + model.b_bar[s]) @ l1[s] + l2[s]
        ys = f @ ys @ f.T + wy
        zs = h @ zs @ h.T + wz
    return float(total + np.trace(model.q[T] @ ys) + np.trace(model.q_bar[T] @ zs))


def quadratic_fit(fun, dim: int):
    """Gradient at 0 and Hessian of a quadratic ``fun: R^dim -> R`` from exact probes."""
    f0 = fun(np.zeros(dim))
    eye = np.eye(dim)
    fp = np.array([fun(e) for e in eye])
    fm = np.array([fun(-e) for e in eye])
    grad = (fp - fm) / 2
    hess = np.empty((dim, dim))
    for i in range(dim):
        hess[i, i] = fp[i] + fm[i] - 2 * f0
        for j in range(i):
            hess[i, j] = hess[j, i] = fun(eye[i] + eye[j]) - fp[i] - fp[j] + f0
    return grad, hess


def _unpack(theta, m, p):
    sizes = [p * m, m * m, p * m, m * m]
    parts = np.split(theta, np.cumsum(sizes)[:-1])
    k1, k2, l1, l2 = (x.reshape(s) for x, s in zip(parts, [(p, m), (m, m), (p, m), (m, m)]))
    return StageGains(k1, k2, l1, l2)


def brute_force_stage_saddle(model: LqMftgModel, later: list[StageGains], t: int,
                             cov_y=None, cov_z=None):
    """Stationary point of the stage-``t`` cost (later stages fixed).

    Returns ``(gains, hessian_min_block_eigs, hessian_max_block_eigs)``; the
    second block must be negative definite for a saddle.
    """
    T, m, p = model.horizon, model.state_dim, model.control_dim
    cov_y = np.eye(m) if cov_y is None else cov_y
    cov_z = np.eye(m) if cov_z is None else cov_z
    dim = 2 * p * m + 2 * m * m

    def fun(theta):
        g = _unpack(theta, m, p)
        lists = [[None] * T for _ in range(4)]
        for s in range(t + 1, T):
            for j in range(4):
                lists[j][s] = later[s][j]
        for j in range(4):
            lists[j][t] = g[j]
        return forward_cost(model, *lists, t, cov_y, cov_z)

    grad, hess = quadratic_fit(fun, dim)
    theta = np.linalg.solve(hess, -grad)
    idx1 = np.r_[0:p * m, p * m + m * m:2 * p * m + m * m]
    idx2 = np.setdiff1d(np.arange(dim), idx1)
    return (_unpack(theta, m, p), np.linalg.eigvalsh(hess[np.ix_(idx1, idx1)]),
            np.linalg.eigvalsh(hess[np.ix_(idx2, idx2)]))


def brute_force_nash(model: LqMftgModel) -> list[StageGains]:
    """Nash gains by backward induction over brute-force stage saddles."""
    T, m, p = model.horizon, model.state_dim, model.control_dim
    gains = [StageGains.zeros(m, p) for _ in range(T)]
    for t in range(T - 1, -1, -1):
        gains[t] = brute_force_stage_saddle(model, gains, t)[0]
    return gains
