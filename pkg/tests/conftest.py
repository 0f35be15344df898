from __future__ import annotations

import numpy as np
import pytest

from robust_mftg.model import LqMftgModel, random_model


def scalar_model(horizon=1, a=1.0, b=1.0, q=1.0, gamma=10.0, sigma=1.0, sigma0=1.0,
                 sigma_bar=0.0, sigma0_bar=0.0, a_bar=0.0, b_bar=0.0, q_bar=1.0):
    one = lambda x: [[float(x)]]  # noqa: E731
    return LqMftgModel(
        horizon=horizon, state_dim=1, control_dim=1,
        a=[one(a)] * horizon, a_bar=[one(a_bar)] * horizon,
        b=[one(b)] * horizon, b_bar=[one(b_bar)] * horizon,
        q=[one(q)] * (horizon + 1), q_bar=[one(q_bar)] * (horizon + 1),
        sigma=one(sigma), sigma_bar=one(sigma_bar), sigma0=one(sigma0),
        sigma0_bar=one(sigma0_bar), gamma=gamma)


def convergence_model():
    """Well-conditioned T=3, m=p=2 instance used for the learner convergence runs."""
    return random_model(1, horizon=3, m=2, p=2, a_scale=2.0, b_scale=3.0, q_range=(2.0, 4.0))


def comparison_model():
    """Time-invariant instance on which simultaneous GDA first diverges."""
    return random_model(0, horizon=5, a_scale=1.2, b_scale=1.5, gamma_margin=1.1)


def small_random_models(count=20, seed=2024):
    """Random instances with m, p <= 3 and T <= 5 (gamma set so cond1 holds)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        out.append(random_model(rng, horizon=int(rng.integers(1, 6)), m=int(rng.integers(1, 4)),
                                p=int(rng.integers(1, 4)), time_invariant=bool(rng.integers(2))))
    return out


@pytest.fixture
def scalar():
    return scalar_model()
