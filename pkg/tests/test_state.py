import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reentry.scenarios import build_k3p3, random_config
from reentry.state import (ConfigError, HistoryBuffer, StateVector, count_violations, delay_index, project_state,
                           random_state, uniform_state, validate_state)


@pytest.fixture(scope="module")
def k3p3():
    return build_k3p3(tau_RL=0.005, tau_LR=0.003)


def test_delay_index_rounding():
    assert delay_index(0.3, 0.1) == 3
    assert delay_index(0.0, 1e-3) == 0
    assert delay_index(10.0, 1e-3) == 10000
    with pytest.raises(ConfigError):
        delay_index(-1.0, 0.1)


def test_history_depth_and_delays(k3p3):
    cfg, _ = k3p3
    assert cfg.history_depth == 5
    h = HistoryBuffer(cfg, uniform_state(cfg))
    for k in range(8):
        h.push(np.full(cfg.layout.size, float(k)))
    assert h.delayed(0)[0] == 7 and h.delayed(5)[0] == 2
    assert np.array_equal(h.segment(2)[:, 0], [5, 6, 7])
    with pytest.raises(ConfigError):
        h.delayed(6)


def test_history_roundtrip(k3p3):
    cfg, _ = k3p3
    rng = np.random.default_rng(0)
    h = HistoryBuffer(cfg, [random_state(cfg, rng) for _ in range(cfg.history_depth + 1)], steps_taken=12)
    back = HistoryBuffer.from_dict(cfg, h.to_dict())
    assert np.array_equal(back.chronological(), h.chronological())
    assert back.steps_taken == 12
    with pytest.raises(ConfigError):
        HistoryBuffer(cfg, [uniform_state(cfg)] * 2)


def test_state_flat_roundtrip(k3p3):
    cfg, _ = k3p3
    Z = random_state(cfg, np.random.default_rng(1))
    back = StateVector.from_flat(Z.to_flat(cfg.layout), cfg.layout)
    assert all(np.array_equal(getattr(Z, c), getattr(back, c)) for c in ("H", "X", "W", "R", "theta"))
    assert np.array_equal(StateVector.from_dict(Z.to_dict()).to_flat(cfg.layout), Z.to_flat(cfg.layout))
    with pytest.raises(ValueError):
        Z.H[0, 0] = 1.0


def test_validate_and_project(k3p3):
    cfg, _ = k3p3
    Z = uniform_state(cfg)
    assert validate_state(Z, cfg) == []
    bad = Z.replace(H=np.full((3, 1), 10.0), Q=np.zeros(6), R=np.ones((5, 5)), rho=np.full(5, 2.0))
    names = {v.component for v in validate_state(bad, cfg)}
    assert {"H", "Q", "rho"} <= names and any(n.startswith("R[") for n in names)
    assert count_violations(bad.to_flat(cfg.layout), cfg)[0] >= 4
    fixed = project_state(bad, cfg)
    assert validate_state(fixed, cfg) == []


def test_project_keeps_valid_states(k3p3):
    cfg, _ = k3p3
    Z = random_state(cfg, np.random.default_rng(5))
    P = project_state(Z, cfg)
    assert np.array_equal(P.to_flat(cfg.layout), Z.to_flat(cfg.layout))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_random_states_are_valid_and_counts_agree(seed):
    rng = np.random.default_rng(seed)
    cfg = random_config(rng).cfg
    Z = random_state(cfg, rng)
    assert validate_state(Z, cfg) == []
    assert count_violations(Z.to_flat(cfg.layout), cfg)[0] == 0
    # perturb one radial component out of the domain: both checkers notice
    H = Z.H * 0 + cfg.R_L
    bad = Z.replace(H=H)
    assert (len(validate_state(bad, cfg)) > 0) == (count_violations(bad.to_flat(cfg.layout), cfg)[0] > 0)


def test_config_rejects_shape_mismatch(k3p3):
    cfg, _ = k3p3
    with pytest.raises(ConfigError):
        cfg.with_(d_L=2)
    with pytest.raises(ConfigError):
        cfg.with_(tau_RL=-1.0)
