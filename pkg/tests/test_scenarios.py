import dataclasses

import numpy as np
import pytest

from reentry.graphs import spectral_gap, symmetrize_conductance
from reentry.integrator import integrate
from reentry.scenarios import (K0, build_k3p3, build_k3p3_valuation, coarse_grain_report, k3p3_equilibrium,
                               random_config, random_history, scenario)
from reentry.state import ConfigError, count_violations, random_state, validate_state


def _named(checks):
    return {c.name: c for c in checks}


def test_example_a_in_all_nine_classes():
    cfg, p = build_k3p3()
    checks = coarse_grain_report(cfg, p, n_pairs=300, reference=k3p3_equilibrium(cfg, p))
    assert len(checks) == 9
    assert all(c.passed for c in checks), [c for c in checks if not c.passed]


def test_zero_precision_floor_leaves_class():
    cfg, p = build_k3p3()
    checks = _named(coarse_grain_report(cfg.with_(eps_Q=0.0), p, n_pairs=50))
    assert not checks["A_QL"].passed


def test_large_policy_step_leaves_class():
    cfg, p = build_k3p3()
    bad = dataclasses.replace(p, eta=(1.5,), lam_reg=1.0)
    assert not _named(coarse_grain_report(cfg, bad, n_pairs=50))["A_theta"].passed


@pytest.mark.parametrize("kw", [{"delta_Q": 1.0}, {"delta_W": 1.2}])
def test_conductance_floor_required(kw):
    with pytest.raises(ConfigError):
        build_k3p3(**kw)


def test_valuation_gain_above_leak_rejected():
    with pytest.raises(ConfigError):
        build_k3p3_valuation(a_Y=2.0, kappa_Y=1.0)


def test_coupling_budget_formula():
    cfg, _ = build_k3p3(k=0.05, sigma_alpha=0.05, sigma_beta=0.05)
    hs = np.linalg.norm(K0)
    # both gates bounded by k + sigma
    assert cfg.C_K_bound == pytest.approx(0.1 * hs)
    assert hs == pytest.approx(np.sqrt(15) / 2, abs=1e-12)


def test_precision_weighted_gap_floor():
    cfg, p = build_k3p3_valuation(delta_Q=0.2)
    lay = cfg.layout
    rng = np.random.default_rng(3)
    tr = integrate(cfg, p, random_state(cfg, rng), 200, record_every=20)
    for row in tr.states:
        Q = row[lay.slices["Q"]]
        assert spectral_gap(symmetrize_conductance(cfg.G_L.with_weights(Q))) >= 3 * (1 - 0.2) - 1e-12


def test_equilibrium_is_valid_and_scenarios_deterministic():
    for name in ("k3p3-default", "k3p3-valuation"):
        cfg, p = scenario(name)
        z1 = k3p3_equilibrium(cfg, p)
        assert validate_state(z1, cfg) == []
        cfg2, p2 = scenario(name)
        assert np.array_equal(z1.to_flat(cfg.layout), k3p3_equilibrium(cfg2, p2).to_flat(cfg2.layout))
    runs = []
    for _ in range(2):
        sc = random_config(np.random.default_rng(7))
        runs.append(integrate(sc.cfg, sc.params, random_state(sc.cfg, np.random.default_rng(0)), 20).states[-1])
    assert np.array_equal(runs[0], runs[1])


def test_random_history_rows_are_valid():
    rng = np.random.default_rng(1)
    for _ in range(10):
        sc = random_config(rng)
        rows = random_history(sc.cfg, rng)
        assert rows.shape == (sc.cfg.history_depth + 1, sc.cfg.layout.size)
        assert count_violations(rows, sc.cfg).sum() == 0
