from __future__ import annotations

import warnings

import numpy as np
import pytest

from robust_mftg.model import PolicyProfile, random_model
from robust_mftg.riccati import (MonotonicityWarning, check_viability_finite, check_viability_mf,
                                 closed_form_cost, compute_population_gap,
                                 find_min_viable_gamma, finite_population_covariances,
                                 finite_population_gap, receding_saddle, solve_riccati,
                                 viability_margin)

from conftest import scalar_model, small_random_models
from oracles import brute_force_nash, brute_force_stage_saddle, forward_cost


def test_scalar_hand_values(scalar):
    sol = solve_riccati(scalar)
    assert sol.ok and sol.cond1_holds
    assert sol.lambda_seq[0][0, 0] == pytest.approx(1.99, abs=1e-14)
    assert sol.m_seq[0][0, 0] == pytest.approx(1 + 1 / 1.99, abs=1e-14)
    assert sol.nash_gains.k1[0][0, 0] == pytest.approx(1 / 1.99, abs=1e-14)
    assert sol.nash_gains.k2[0][0, 0] == pytest.approx(0.01 / 1.99, abs=1e-14)
    # sigma0 = sigma = 1, no common noise: M_0 + tr(M_1 Sigma)
    assert sol.nash_value == pytest.approx(2 + 1 / 1.99, abs=1e-13)


def test_zero_dynamics_gives_value_matrix_q():
    model = random_model(4, horizon=3, m=2, p=2)
    zero = [np.zeros((2, 2))] * 3
    sol = solve_riccati(model.replace(a=zero, a_bar=zero))
    for t in range(4):
        assert np.allclose(sol.m_seq[t], model.q[t], atol=1e-14)
        assert np.allclose(sol.nash_gains.k1[min(t, 2)], 0, atol=1e-14)


def test_zero_covariances_give_zero_value():
    z = np.zeros((2, 2))
    model = random_model(2, horizon=3, m=2, p=1).replace(sigma=z, sigma_bar=z, sigma0=z,
                                                          sigma0_bar=z)
    assert solve_riccati(model).nash_value == 0.0


def test_singular_lambda_is_reported():
    model = scalar_model(gamma=1 / np.sqrt(2))
    sol = solve_riccati(model)
    assert sol.failed_step == 0 and not sol.ok and not sol.cond1_holds
    assert np.isnan(sol.nash_value)


def test_cond1_fails_for_small_gamma():
    sol = solve_riccati(scalar_model(gamma=0.5))
    assert sol.ok and not sol.cond1_holds


def test_nash_value_equals_lyapunov_cost_at_nash():
    for model in small_random_models(10):
        sol = solve_riccati(model)
        cost, _ = closed_form_cost(model, sol.nash_gains, model.sigma0, model.sigma0_bar)
        assert cost == pytest.approx(sol.nash_value, rel=1e-10)


def test_hand_cost_of_fixed_policy():
    model = scalar_model(sigma=0.0, sigma0=1.0)
    policy = PolicyProfile([[[0.5]]], [[[0.0]]], [[[0.0]]], [[[0.0]]])
    cost, _ = closed_form_cost(model, policy, np.eye(1), np.zeros((1, 1)))
    # stage (1 + 0.25) * 1 plus terminal 0.5^2
    assert cost == pytest.approx(1.5, abs=1e-15)


def test_closed_form_matches_forward_propagation():
    rng = np.random.default_rng(5)
    for model in small_random_models(8, seed=9):
        T, m, p = model.horizon, model.state_dim, model.control_dim
        gains = [rng.normal(scale=0.3, size=s) for s in [(T, p, m), (T, m, m), (T, p, m), (T, m, m)]]
        policy = PolicyProfile(*gains)
        fc = finite_population_covariances(model, 7)
        for start in range(T + 1):
            got, _ = closed_form_cost(model, policy, fc.init_y, fc.init_z, start,
                                      fc.noise_y, fc.noise_z)
            want = forward_cost(model, *[list(g) for g in gains], start, fc.init_y, fc.init_z,
                                fc.noise_y, fc.noise_z)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-12)


def test_finite_population_covariances():
    model = random_model(0, horizon=2)
    fc = finite_population_covariances(model, 4)
    assert np.allclose(fc.noise_y, 0.75 * model.sigma)
    assert np.allclose(fc.noise_z, model.sigma_bar + model.sigma / 4)
    assert np.allclose(fc.init_y, 0.75 * model.sigma0)
    assert np.allclose(fc.init_z, model.sigma0_bar + model.sigma0 / 4)


def test_riccati_gains_match_brute_force_nash():
    for model in small_random_models(20):
        sol = solve_riccati(model)
        assert sol.cond1_holds
        for t, want in enumerate(brute_force_nash(model)):
            for got, ref in zip(sol.nash_gains.stage(t), want):
                assert np.allclose(got, ref, atol=1e-8)


def test_receding_saddle_is_a_saddle_for_arbitrary_future():
    rng = np.random.default_rng(11)
    model = random_model(6, horizon=3, m=2, p=2)
    future = PolicyProfile(*[rng.normal(scale=0.2, size=s)
                             for s in [(3, 2, 2), (3, 2, 2), (3, 2, 2), (3, 2, 2)]])
    later = [future.stage(s) for s in range(3)]
    for t in range(3):
        got = receding_saddle(model, future, t)
        want, min_eigs, max_eigs = brute_force_stage_saddle(model, later, t)
        assert min_eigs.min() > 0 and max_eigs.max() < 0
        for a, b in zip(got, want):
            assert np.allclose(a, b, atol=1e-8)


def test_receding_saddle_needs_future_before_last_stage():
    with pytest.raises(ValueError):
        receding_saddle(scalar_model(horizon=2), None, 0)


def test_scalar_viability_margin(scalar):
    sol = solve_riccati(scalar)
    # (M_1 - 100) * 1 + M_0 * 1
    assert viability_margin(scalar, sol) == pytest.approx(1 - 100 + 1 + 1 / 1.99, abs=1e-12)
    assert viability_margin(scalar, sol) == pytest.approx(-97.497487437186, abs=1e-9)
    assert check_viability_mf(scalar, sol).viable


def test_finite_viability_shifts_margin_by_ct_over_n():
    model = random_model(3, horizon=4)
    sol = solve_riccati(model)
    gap = finite_population_gap(model, sol)
    mf = check_viability_mf(model, sol)
    for n in (1, 10, 1000):
        fin = check_viability_finite(model, sol, gap, n)
        assert fin.margin == pytest.approx(mf.margin + gap.constant * model.horizon / n)
        if fin.viable:
            assert mf.viable
    with pytest.raises(ValueError):
        check_viability_finite(model, sol, gap, 0)


def test_psi_blocks_are_closed_loop_products():
    model = random_model(7, horizon=3, m=2, p=1)
    policy = solve_riccati(model).nash_gains
    an = compute_population_gap(model, policy)
    from robust_mftg.model import closed_loop_matrices
    dev, _ = closed_loop_matrices(model, policy)
    blk = lambda t, s: an.psi[2 * t:2 * t + 2, 2 * s:2 * s + 2]  # noqa: E731
    assert np.allclose(blk(1, 1), np.eye(2))
    assert np.allclose(blk(3, 1), dev[2] @ dev[1])
    assert np.allclose(blk(0, 2), 0)


def test_population_constant_for_zero_dynamics():
    model = scalar_model(a=0.0, sigma=4.0)
    zero = PolicyProfile.zeros(1, 1, 1)
    an = compute_population_gap(model, zero)
    # identity noise-to-state maps and unit weights: 2 * ||I_2||_F
    assert an.c1 == pytest.approx(2 * np.sqrt(2))
    assert an.constant == pytest.approx(2 * np.sqrt(2) * 4)
    assert an.gap_bound(8) == pytest.approx(2 * np.sqrt(2) * 4 / 8)


def test_min_gamma_matches_grid_scan():
    model = random_model(5, horizon=3, m=2, p=2, gamma=1.0)
    tol = 1e-6
    g = find_min_viable_gamma(model, 1e-2, 1e3, tol)
    assert g is not None
    grid = np.linspace(g - 0.2, g + 0.2, 401)
    viable = [check_viability_mf(model.with_gamma(x), solve_riccati(model.with_gamma(x))).viable
              for x in grid]
    first = grid[np.argmax(viable)]
    assert abs(first - g) <= 0.001 + tol
    assert check_viability_mf(model.with_gamma(g), solve_riccati(model.with_gamma(g))).viable
    below = model.with_gamma(g - 2 * tol)
    assert not check_viability_mf(below, solve_riccati(below)).viable


def test_min_gamma_edge_cases(scalar):
    assert find_min_viable_gamma(scalar, 50.0, 100.0, 1e-6) == 50.0
    # a huge initial variance can never be offset by the gamma^2 terms below hi
    heavy = scalar_model(sigma0=1e9)
    assert find_min_viable_gamma(heavy, 1.0, 10.0, 1e-6) is None
    with pytest.raises(ValueError):
        find_min_viable_gamma(scalar, 2.0, 1.0, 1e-6)


def test_finite_certificate_needs_larger_gamma():
    model = random_model(5, horizon=3, m=2, p=2, gamma=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", MonotonicityWarning)
        mf = find_min_viable_gamma(model, 1e-2, 1e3, 1e-6)
        fin = find_min_viable_gamma(model, 1e-2, 1e3, 1e-6, n_agents=10)
    assert fin > mf
