from __future__ import annotations

import json

import numpy as np
import pytest

from robust_mftg.model import (ConfigError, LqMftgModel, PolicyProfile, StageGains,
                               closed_loop_matrices, dump_gains, load_gains, load_model,
                               model_from_dict, model_to_dict, random_model, validate_model)
from robust_mftg.riccati import solve_riccati

from conftest import scalar_model


def base_config():
    return {"horizon": 2, "state_dim": 2, "control_dim": 1, "gamma": 5.0,
            "a": [[1.0, 0.1], [0.0, 0.9]], "b": [[0.0], [1.0]],
            "q": [[1.0, 0.0], [0.0, 1.0]], "q_bar": [[2.0, 0.0], [0.0, 1.0]],
            "sigma": [[0.1, 0.0], [0.0, 0.1]], "sigma0": [[1.0, 0.0], [0.0, 1.0]]}


def test_matrix_shorthand_broadcasts_over_time():
    model = model_from_dict(base_config())
    assert len(model.a) == 2 and len(model.q) == 3
    assert np.array_equal(model.a[0], model.a[1])
    # optional keys default to zero
    assert np.array_equal(model.a_bar[1], np.zeros((2, 2)))
    assert np.array_equal(model.sigma0_bar, np.zeros((2, 2)))
    assert model.is_time_invariant()


def test_time_varying_sequences_are_kept():
    cfg = base_config()
    cfg["a"] = [[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.0], [0.0, 0.5]]]
    model = model_from_dict(cfg)
    assert model.a[1][0, 0] == 0.5
    assert not model.is_time_invariant()
    with pytest.raises(ValueError):
        model.with_horizon(4)


def test_round_trip_through_dict(tmp_path):
    model = random_model(3, horizon=3, m=2, p=3)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(model_to_dict(model)))
    back = load_model(path)
    for name in ("a", "a_bar", "b", "b_bar", "q", "q_bar"):
        assert all(np.array_equal(x, y) for x, y in zip(getattr(model, name), getattr(back, name)))
    assert back.gamma == model.gamma


@pytest.mark.parametrize("mutate, key", [
    (lambda c: c.pop("gamma"), "gamma"),
    (lambda c: c.update(extra=1), "extra"),
    (lambda c: c.update(b=[[1.0, 0.0], [0.0, 1.0]]), "b[0]"),
    (lambda c: c.update(q=[[1.0, 0.0], [0.0, -1.0]]), "q[0]"),
    (lambda c: c.update(horizon=0), "horizon"),
    (lambda c: c.update(a=[[[1.0, 0.0], [0.0, 1.0]]] * 3), "a"),
    (lambda c: c.update(sigma=[[1.0, 2.0], [0.0, 1.0]]), "sigma"),
])
def test_config_errors_name_the_offending_key(mutate, key):
    cfg = base_config()
    mutate(cfg)
    with pytest.raises(ConfigError) as info:
        model_from_dict(cfg)
    assert info.value.key == key


def test_load_model_reports_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError) as info:
        load_model(path)
    assert info.value.key == "<root>"
    with pytest.raises(ConfigError):
        load_model(tmp_path / "missing.json")


def test_validate_model_lists_every_problem():
    model = scalar_model()
    assert validate_model(model) == []
    broken = model.replace(q=(np.array([[-1.0]]), np.array([[1.0]])), sigma=np.ones((2, 2)))
    problems = validate_model(broken)
    assert any(p.startswith("q[0] not positive definite") for p in problems)
    assert any(p.startswith("sigma has shape") for p in problems)


def test_gains_file_round_trip(tmp_path):
    model = random_model(1, horizon=3, m=2, p=1)
    policy = solve_riccati(model).nash_gains
    path = tmp_path / "g.json"
    dump_gains(policy, path)
    back = load_gains(path)
    assert set(json.loads(path.read_text())) == {"k1", "k2", "l1", "l2"}
    for t in range(3):
        for x, y in zip(policy.stage(t), back.stage(t)):
            assert np.array_equal(x, y)


def test_policy_profile_helpers():
    policy = PolicyProfile.zeros(3, 2, 1)
    assert policy.horizon == 3 and policy.k1[0].shape == (1, 2) and policy.k2[0].shape == (2, 2)
    g = StageGains(np.ones((1, 2)), np.eye(2), np.zeros((1, 2)), np.zeros((2, 2)))
    updated = policy.with_stage(1, g)
    assert np.array_equal(updated.k1[1], np.ones((1, 2)))
    assert np.array_equal(policy.k1[1], np.zeros((1, 2)))  # original untouched
    assert updated.is_finite()
    with pytest.raises(ValueError):
        PolicyProfile(policy.k1, policy.k2[:2], policy.l1, policy.l2)


def test_closed_loop_matrices():
    model = scalar_model(a=1.0, b=2.0, a_bar=0.5, b_bar=1.0)
    policy = PolicyProfile([[[0.25]]], [[[0.1]]], [[[0.2]]], [[[0.3]]])
    dev, mean = closed_loop_matrices(model, policy)
    assert dev[0][0, 0] == pytest.approx(1.0 - 2.0 * 0.25 + 0.1)
    assert mean[0][0, 0] == pytest.approx(1.5 - 3.0 * 0.2 + 0.3)


def test_with_horizon_reuses_first_stage():
    model = random_model(0, horizon=2, m=2, p=2)
    longer = model.with_horizon(5)
    assert longer.horizon == 5 and len(longer.q) == 6
    assert np.array_equal(longer.q[5], model.q[2])
    assert np.array_equal(longer.b[4], model.b[0])


def test_random_model_satisfies_cond1():
    for seed in range(5):
        model = random_model(seed, horizon=4, m=3, p=2)
        assert validate_model(model) == []
        assert solve_riccati(model).cond1_holds


def test_model_arrays_are_read_only():
    model = scalar_model()
    with pytest.raises(ValueError):
        model.a[0][0, 0] = 2.0
    assert isinstance(model, LqMftgModel)
