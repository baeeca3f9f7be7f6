import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reentry.fields import (FieldParams, awareness_field, eligibility_policy_update, executive_conductance,
                            executive_rhs, homeostatic_step, memory_update, memory_write, policy_probs,
                            policy_score, precision_field, reliability_update, routing_update, validate_params,
                            valuative_rhs)
from reentry.scenarios import build_k3p3, build_k3p3_valuation, random_config
from reentry.state import ConfigError, random_state


def test_precision_field_in_box():
    Q = precision_field(3.0, np.zeros(4), np.ones(4), 0.2, 1.5)
    assert np.all((Q >= 0.2) & (Q <= 1.5))
    with pytest.raises(ConfigError):
        precision_field(0.0, np.zeros(2), -np.ones(2), 0.1, 1.0)


def test_valuation_precision_matches_tanh_form():
    # eps + (R - eps) sigmoid(2y) with eps = 1 - d, R = 1 + d equals 1 + d tanh(y)
    for y in np.linspace(-1, 1, 7):
        q = precision_field(y, np.zeros(1), np.full(1, 2.0), 0.95, 1.05)
        assert q[0] == pytest.approx(1 + 0.05 * math.tanh(y), abs=1e-14)
    assert executive_conductance(0.3, np.array([0.95]), 0.05)[0] == pytest.approx(1 + 0.05 * math.tanh(0.3))


def test_awareness_weights_on_simplex():
    sc = random_config(np.random.default_rng(3))
    cfg, p = sc.cfg, sc.params
    X = random_state(cfg, np.random.default_rng(4)).X
    W, Wbar = awareness_field(X, 0.7, cfg, p)
    for j in range(cfg.V):
        mask = cfg.G_R.targets == j
        assert W[mask].sum() == pytest.approx(1.0)
    assert np.all(Wbar > 0)


def test_valuative_viability_and_rejection():
    p = FieldParams(kappa_Y=1.0, a_Y=0.8, G_Y=np.ones((1, 2)))
    assert valuative_rhs(np.array([1.0]), np.array([5.0, 5.0]), p)[0] <= -1.0 + 0.8 + 1e-12
    with pytest.raises(ConfigError):
        valuative_rhs(np.array([0.0]), np.zeros(2), FieldParams(kappa_Y=1.0, a_Y=2.0, G_Y=np.ones((1, 2))))
    with pytest.raises(ConfigError):
        executive_rhs(np.zeros(1), np.zeros(1), FieldParams(mu_P=0.5, W_P=np.eye(1)))


def test_homeostatic_step_bounds():
    h = homeostatic_step(np.array([1.0]), np.array([100.0]), 1.0, 0.1, B_u=1.0)
    assert h[0] == pytest.approx(0.9 + 0.1)
    with pytest.raises(ConfigError):
        homeostatic_step(np.zeros(1), np.zeros(1), 10.0, 0.1)


def test_reliability_and_memory_stay_in_range():
    rho = 0.5
    for err in (0.0, 1.0, 100.0):
        rho = reliability_update(rho, np.full(3, err), 0.3)
        assert 0 <= rho <= 1
    with pytest.raises(ValueError):
        reliability_update(1.5, np.zeros(1), 0.1)
    p = FieldParams(W_M=np.ones((2, 3)) * 50, C_M=0.5)
    w = memory_write(np.ones((4, 2)), np.ones(1), p, 2)
    assert np.linalg.norm(w) <= 0.5 + 1e-12
    with pytest.raises(ValueError):
        memory_update(np.zeros(2), 0.99, w, eps_M=0.05)


def test_policy_score_matches_finite_difference():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(4)
    eps = 0.1
    s = policy_score(theta, 2, eps)
    h = 1e-6
    fd = np.array([(math.log(policy_probs(theta + h * e, eps)[2]) - math.log(policy_probs(theta - h * e, eps)[2]))
                   / (2 * h) for e in np.eye(4)])
    assert np.allclose(s, fd, atol=1e-7)
    assert np.linalg.norm(s) <= math.sqrt(2) + 1e-12
    assert np.all(policy_probs(theta, eps) >= eps / 4 - 1e-15)


def test_policy_update_uses_previous_trace():
    z, theta = np.array([1.0, 0.0]), np.array([0.0, 0.0])
    z1, th1, dth = eligibility_policy_update(z, theta, 1.0, np.array([0.0, 5.0]), 0.5, 0.1, 0.0, 10.0)
    assert np.allclose(dth, [0.1, 0.0])
    assert np.allclose(z1, [0.5, 5.0])
    with pytest.raises(ValueError):
        eligibility_policy_update(z, theta, 2.0, z, 0.5, 0.1, 0.0, 10.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_routing_rows_on_simplex(seed):
    rng = np.random.default_rng(seed)
    R = routing_update(rng.standard_normal((5, 5)) * 3, rng.uniform(0, 1, 5), 0.5)
    assert np.all(R >= 0) and np.allclose(R.sum(axis=1), 1.0)


def test_validate_params_rejections():
    cfg, p = build_k3p3()
    validate_params(cfg, p)
    for bad in (p.replace(A_L=np.array([[2.0]])), p.replace(lam=(1.0,)), p.replace(eps_M=0.6),
                p.replace(W_base=np.zeros(4)), p.replace(kappa_h=2000.0), p.replace(routing_gain=1.0)):
        with pytest.raises(ConfigError):
            validate_params(cfg, bad)
    with pytest.raises(ConfigError):
        validate_params(cfg.with_(dt=0.5), p)
    with pytest.raises(ConfigError):
        FieldParams.from_dict({"alpha_H": 1.0, "alpah_X": 1.0})


def test_example_readouts_vanish_at_equilibrium():
    cfg, p = build_k3p3_valuation()
    from reentry.fields import resolve_params, rp_input, ry_input
    q = resolve_params(cfg, p)
    ry = ry_input(q.H_c, q.X_c, np.zeros(1), np.zeros(1), np.zeros(1), 0.0, 0.0, 0.0, q)
    rp = rp_input(q.H_c, q.X_c, np.zeros(1), np.zeros(2), q)
    assert np.all(q.G_Y @ ry == 0) and np.all(q.G_P @ rp == 0)
    # boundary signs on the valuative and executive balls
    assert valuative_rhs(np.array([1.0]), np.full(ry.size, 3.0), q)[0] <= -q.kappa_Y + q.a_Y + 1e-12
    assert executive_rhs(np.array([-1.0]), -np.full(rp.size, 3.0), q)[0] >= q.mu_P - q.a_P - 1e-12
