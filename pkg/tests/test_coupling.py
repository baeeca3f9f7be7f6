import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reentry.coupling import (AttentionKernel, ConstantSharedKernel, FixedKernel, GateSpec, GatedMixtureKernel,
                              KernelError, LowRankGatedAttentionKernel, LowRankKernel, apply_adjoint, apply_forward,
                              family_budget, hs_norm, kernel_from_dict)

K0 = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.5], [0.5, 0.0, 1.0]])


def dense_norm(kernel, Y=None, P=None):
    return math.sqrt(sum(float(np.sum(b ** 2)) for b in np.asarray(kernel.blocks(Y, P)).reshape(-1)))


def test_k0_hs_norm():
    assert hs_norm(FixedKernel.from_matrix(K0)) == pytest.approx(math.sqrt(15) / 2, abs=1e-12)


def test_gated_mixture_budget_matches_closed_form():
    k, s_a, s_b = 0.05, 0.05, 0.08
    kern = GatedMixtureKernel((FixedKernel.from_matrix(K0),), (GateSpec(k, s_a, "Y"),), (GateSpec(k, s_b, "P"),))
    assert family_budget(kern) == pytest.approx(math.sqrt(15) / 2 * (k + max(s_a, s_b)), abs=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(50):
        Y, P = rng.uniform(-3, 3, 1), rng.uniform(-3, 3, 1)
        assert kern.hs_norm(Y, P) <= family_budget(kern) + 1e-12
        assert kern.gate_values(Y, P)[0] == pytest.approx(k + s_a * math.tanh(Y[0]))
        assert kern.gate_values(Y, P, adjoint=True)[0] == pytest.approx(k + s_b * math.tanh(P[0]))


def test_signed_gate_bound():
    g = GateSpec(0.1, 0.2, "Y")
    assert g.bound == pytest.approx(0.3)
    assert g.value(np.array([-5.0])) < 0
    assert abs(g.value(np.array([-5.0]))) <= g.bound
    with pytest.raises(KernelError):
        GateSpec(0.1, 0.0, "Z")


def test_shared_and_low_rank_norms_match_dense():
    rng = np.random.default_rng(1)
    sh = ConstantSharedKernel(rng.standard_normal((2, 3)), 4, 5)
    assert sh.hs_norm() == pytest.approx(np.linalg.norm(sh.blocks()), rel=1e-12)
    a = rng.standard_normal((2, 4))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = rng.standard_normal((2, 3))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    lr = LowRankKernel(a, b, rng.standard_normal((2, 2, 2)))
    assert lr.hs_norm() == pytest.approx(np.linalg.norm(lr.blocks()), rel=1e-12)
    assert lr.hs_norm() <= lr.family_budget() + 1e-12
    with pytest.raises(KernelError):
        LowRankKernel(2 * a, b, np.ones((2, 2, 2)))


def test_gated_low_rank_budget_bounds_norm():
    rng = np.random.default_rng(2)
    a = np.eye(3)[:2]
    b = np.eye(2)
    g = (GateSpec(0.5, 0.3, "Y"), GateSpec(0.4, 0.4, "P"))
    kern = LowRankGatedAttentionKernel(a, b, rng.standard_normal((2, 1, 1)), g)
    for _ in range(20):
        Y, P = rng.standard_normal(1), rng.standard_normal(1)
        assert kern.hs_norm(Y, P) == pytest.approx(np.linalg.norm(kern.blocks(Y, P)), rel=1e-12)
        assert kern.hs_norm(Y, P) <= kern.family_budget() + 1e-12


def test_apply_forward_and_adjoint_against_loops():
    rng = np.random.default_rng(3)
    kern = FixedKernel(rng.standard_normal((3, 4, 2, 2)))
    X, H = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
    alpha = rng.dirichlet(np.ones(4), size=3)
    beta = rng.dirichlet(np.ones(3), size=4)
    B = kern.blocks()
    fwd = np.array([sum(alpha[l, i] * B[l, i] @ X[i] for i in range(4)) for l in range(3)])
    adj = np.array([sum(beta[i, l] * B[l, i].T @ H[l] for l in range(3)) for i in range(4)])
    assert np.allclose(apply_forward(kern, alpha, X), fwd)
    assert np.allclose(apply_adjoint(kern, beta, H), adj)
    plain = np.array([sum(B[l, i] @ X[i] for i in range(4)) for l in range(3)])
    assert np.allclose(apply_forward(kern, None, X), plain)


def test_weights_off_simplex_rejected():
    kern = FixedKernel(np.ones((2, 2, 1, 1)))
    with pytest.raises(KernelError):
        apply_forward(kern, np.array([[0.7, 0.7], [0.5, 0.5]]), np.ones((2, 1)))
    with pytest.raises(KernelError):
        apply_forward(kern, None, np.ones((3, 1)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_attention_rows_on_simplex(seed):
    rng = np.random.default_rng(seed)
    kern = AttentionKernel(rng.standard_normal((2, 3)), rng.standard_normal((2, 2)), rng.standard_normal((2, 3)), 4, 5)
    alpha, beta = kern.attention_weights(rng.standard_normal((4, 2)) * 3, rng.standard_normal((5, 3)) * 3)
    for w in (alpha, beta):
        assert np.all(w >= 0) and np.allclose(w.sum(axis=1), 1.0)
    # any simplex selection stays within the reported HS bound
    X = rng.standard_normal((5, 3))
    out = apply_forward(kern, alpha, X)
    assert np.linalg.norm(out) <= kern.hs_norm() * np.linalg.norm(X) + 1e-9


def test_kernel_dict_roundtrip_and_unknown_keys():
    kern = GatedMixtureKernel((FixedKernel.from_matrix(K0),), (GateSpec(0.05, 0.05, "Y"),), (GateSpec(0.05, 0.05, "P"),))
    back = kernel_from_dict(kern.to_dict())
    assert np.allclose(back.blocks(np.array([0.3]), np.array([-0.2])), kern.blocks(np.array([0.3]), np.array([-0.2])))
    d = FixedKernel.from_matrix(K0).to_dict()
    d["colour"] = 1
    with pytest.raises(KernelError):
        kernel_from_dict(d)
