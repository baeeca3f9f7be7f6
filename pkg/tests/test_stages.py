import numpy as np
import pytest

from reentry.scenarios import K0, build_k3p3, k3p3_equilibrium, random_config
from reentry.stages import (DEPENDENCY_TABLE, RecordingWorkspace, StepAborted, StepEngine, StepInputs,
                            audit_dependencies, dependency_graph, discrete_step, instrumented_step, is_acyclic,
                            zero_inputs)
from reentry.state import HistoryBuffer, random_state, validate_state


def _inputs(cfg, rng):
    return StepInputs(rng.standard_normal(cfg.n_u), rng.standard_normal(cfg.n_u),
                      tuple(int(rng.integers(m)) for m in cfg.policy_sizes), float(rng.uniform(-1, 1)))


def _random_history(cfg, rng):
    return HistoryBuffer(cfg, [random_state(cfg, rng) for _ in range(cfg.history_depth + 1)])


def test_recorded_graph_is_acyclic_and_matches_table():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 5:
        sc = random_config(rng)
        if not sc.cfg.policy_sizes:
            continue
        hist = _random_history(sc.cfg, rng)
        _, ws = instrumented_step(hist, _inputs(sc.cfg, rng), sc.cfg, sc.params)
        assert audit_dependencies(ws) == []
        assert is_acyclic(dependency_graph(ws))
        checked += 1


def test_audit_detects_cycle_and_missing_inputs():
    ws = RecordingWorkspace()
    ws["a"] = 1
    ws.begin("1")
    _ = ws["a"]
    ws["b"] = 2
    _ = ws["b"]
    ws["a"] = 3
    assert not is_acyclic(dependency_graph(ws))
    problems = audit_dependencies(ws)
    assert any("cycle" in p for p in problems)
    assert any("H^{t+1}" in p for p in problems)


def test_table_covers_every_component():
    assert {"Q^{t+1}", "W^{t+1}", "H^{t+1}", "X^{t+1}", "Y^{t+1}", "R^{t+1}", "P^{t+1}", "M^{t+1}"} <= set(DEPENDENCY_TABLE)


def test_coupling_signal_matches_direct_product():
    cfg, p = build_k3p3(tau_RL=0.004, tau_LR=0.002)
    rng = np.random.default_rng(0)
    zstar = k3p3_equilibrium(cfg, p)
    rows = [random_state(cfg, rng).replace(Y=np.zeros(1), P=np.zeros(1)) for _ in range(cfg.history_depth + 1)]
    hist = HistoryBuffer(cfg, rows)
    _, ws = instrumented_step(hist, zero_inputs(cfg), cfg, p)
    X_del = hist.state(4).X
    H_del = hist.state(2).H
    assert np.allclose(ws["C_RL"][0], 0.05 * K0 @ X_del)
    assert np.allclose(ws["C_LR"][0], 0.05 * K0.T @ H_del)
    assert zstar is not None


def test_steps_stay_in_domain():
    rng = np.random.default_rng(5)
    for _ in range(10):
        sc = random_config(rng)
        hist = _random_history(sc.cfg, rng)
        eng = StepEngine(sc.cfg, sc.params)
        for _ in range(20):
            Z1 = discrete_step(hist, _inputs(sc.cfg, rng), sc.cfg, sc.params, engine=eng)
            assert validate_state(Z1, sc.cfg) == []
            hist.push(Z1.to_flat(sc.cfg.layout))


def test_batched_step_equals_single_steps():
    rng = np.random.default_rng(8)
    for _ in range(10):
        sc = random_config(rng)
        eng = StepEngine(sc.cfg, sc.params)
        rows = np.stack([random_state(sc.cfg, rng).to_flat(sc.cfg.layout) for _ in range(3)])
        prev = rows[::-1].copy()
        inp = _inputs(sc.cfg, rng)
        batch = eng.step(rows, prev, prev, rows, inp)
        single = np.stack([eng.step(rows[b], prev[b], prev[b], rows[b], inp) for b in range(3)])
        assert np.allclose(batch, single, atol=1e-13, rtol=0)


def test_frozen_regime_holds_auxiliaries():
    rng = np.random.default_rng(2)
    sc = random_config(rng)
    cfg = sc.cfg
    eng = StepEngine(cfg, sc.params)
    ref = random_state(cfg, rng).to_flat(cfg.layout)
    cur = random_state(cfg, rng).to_flat(cfg.layout)
    out = eng.step(cur, cur, cur, cur, _inputs(cfg, rng), ref=ref)
    lay = cfg.layout
    for c in ("Q", "W", "R", "Y", "rho", "z", "theta", "M", "h"):
        assert np.array_equal(out[lay.slices[c]], ref[lay.slices[c]]), c
    for c in ("H", "X"):
        assert not np.array_equal(out[lay.slices[c]], ref[lay.slices[c]])


def test_nonfinite_state_aborts():
    cfg, p = build_k3p3()
    hist = HistoryBuffer(cfg, k3p3_equilibrium(cfg, p))
    bad = hist.current().copy()
    bad[0] = np.nan
    hist.push(bad)
    with pytest.raises(StepAborted):
        discrete_step(hist, zero_inputs(cfg), cfg, p)
