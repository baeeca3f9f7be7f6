import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reentry.scenarios import build_k3p3, k3p3_equilibrium
from reentry.stability import (build_report, executive_crossgain, lyapunov_series, one_sided_lipschitz_estimate,
                               radial_margin_check, slowfast_bound_check, small_gain_check, state_dependent_margin)


def test_small_gain_margins():
    ok, a_L, a_R = small_gain_check(0.5, 1.0, 2.0)
    assert ok
    assert a_L == pytest.approx(0.5 - 0.0625)
    assert a_R == pytest.approx(1.0 - 0.125)
    assert not small_gain_check(2.0, 1.0, 2.0)[0]
    with pytest.raises(ValueError):
        small_gain_check(0.1, 0.0, 1.0)


@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0, 5))
def test_small_gain_equivalent_to_positive_margins(mu_L, mu_R, C):
    ok, a_L, a_R = small_gain_check(C, mu_L, mu_R)
    if abs(C * C - mu_L * mu_R) > 1e-9:
        assert ok == (a_L > 0) == (a_R > 0)


def test_radial_margin_boundary():
    assert radial_margin_check(2.0, 2.0, 1.0, 2.0, 1.0)
    assert not radial_margin_check(1.9, 2.0, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        radial_margin_check(1, 1, 0, 1, 1)


def test_state_dependent_margin_values():
    m_L, m_R, M = state_dependent_margin(0.1, 0.2, 0.3, 0.4, 2.0, 3.0)
    assert m_L == pytest.approx(0.1 * 3 + 0.3 * 2)
    assert m_R == pytest.approx(0.2 * 2 + 0.4 * 3)
    assert M == pytest.approx(max(m_L, m_R))


def test_crossgain_positive_definite_case():
    M, ok = executive_crossgain(1.0, 1.0, 0.2, 0.2, 0.0, 0.0, 0.0, 1.0)
    assert ok
    assert np.all(np.linalg.eigvalsh(M) > 0)
    _, bad = executive_crossgain(0.1, 0.1, 2.0, 2.0, 0.0, 0.0, 0.0, 0.1)
    assert not bad


def test_one_sided_estimate_of_linear_map():
    A = np.array([[-2.0, 1.0], [-1.0, -3.0]])
    sym_max = np.linalg.eigvalsh(0.5 * (A + A.T)).max()
    est = one_sided_lipschitz_estimate(lambda u: A @ u, lambda r: r.standard_normal(2), 3000,
                                       np.random.default_rng(0))
    assert est <= sym_max + 1e-12
    assert est >= sym_max - 1e-2


def test_slowfast_constant_target():
    t = np.linspace(0, 5, 501)
    Y = np.exp(-2 * t)[:, None]
    res = slowfast_bound_check(t, Y, np.zeros_like(Y), 2.0, 1e-12)
    assert res.passed and res.G1 == 0.0


def test_lyapunov_series_without_delay_is_half_square():
    cfg, p = build_k3p3()
    zstar = k3p3_equilibrium(cfg, p)
    rows = np.stack([zstar.to_flat(cfg.layout)] * 3)
    lay = cfg.layout
    rows[1, lay.slices["H"]] += 0.3
    V = lyapunov_series(rows, cfg, 0.2, 1.0, 1.0, zstar, 0, 0)
    n_H = lay.slices["H"].stop - lay.slices["H"].start
    assert V[0] == 0.0
    assert V[1] == pytest.approx(0.5 * n_H * 0.09)


def test_lyapunov_window_term_matches_trapezoid():
    cfg, p = build_k3p3(tau_RL=0.002, tau_LR=0.0)
    zstar = k3p3_equilibrium(cfg, p)
    lay = cfg.layout
    rows = np.stack([zstar.to_flat(lay)] * 4)
    n_X = lay.slices["X"].stop - lay.slices["X"].start
    rows[:, lay.slices["X"]] += np.array([0.0, 1.0, 2.0, 0.0])[:, None] / math.sqrt(n_X)
    C, mu = 0.5, 1.0
    V = lyapunov_series(rows, cfg, C, mu, mu, zstar, 2, 0)
    # |X~|^2 at rows 1..3 is 1, 4, 0; trapezoid over two steps
    integral = cfg.dt * (0.5 * 1 + 4 + 0.5 * 0)
    assert np.isnan(V[1])
    assert V[3] == pytest.approx(C ** 2 / (2 * mu) * integral)


@settings(deadline=None, max_examples=5)
@given(st.floats(0.01, 0.3))
def test_report_small_gain_tracks_coupling(k):
    cfg, p = build_k3p3(k=k)
    rep = build_report(cfg, p, reference=k3p3_equilibrium(cfg, p), n_pairs=50)
    assert rep.small_gain_ok == (rep.C_K ** 2 < rep.mu_L * rep.mu_R)
