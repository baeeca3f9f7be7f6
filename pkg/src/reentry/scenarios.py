"""Built-in configurations: the K3/P3 worked examples and random valid configurations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import (AttentionKernel, ConstantSharedKernel, FixedKernel, GateSpec, GatedMixtureKernel,
                       LowRankGatedAttentionKernel, LowRankKernel, family_budget)
from .fields import (FieldParams, n_ry, n_rp, n_salience_features, opnorm, resolve_params, step_bound)
from .graphs import complete_graph, cycle_graph, laplacian_matrix, path_graph
from .simplex import sparsemax
from .state import N_SUBSYSTEMS, ArchitectureConfig, ConfigError, StateVector, check_assumptions

K0 = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.5], [0.5, 0.0, 1.0]])


def k3p3_principal():
    """H* = X* = e1 on three nodes (per-node scalars)."""
    e1 = np.array([[1.0], [0.0], [0.0]])
    return e1.copy(), e1.copy()


def _k3p3(k, sigma_alpha, sigma_beta, delta_Q, delta_W, alpha_H, alpha_X, kappa_Y, kappa_P,
          a_Y, a_P, tau_RL, tau_LR, dt):
    for name, v in (("k", k), ("sigma_alpha", sigma_alpha), ("sigma_beta", sigma_beta), ("delta_Q", delta_Q),
                    ("delta_W", delta_W), ("alpha_H", alpha_H), ("alpha_X", alpha_X), ("kappa_Y", kappa_Y),
                    ("kappa_P", kappa_P)):
        if not v > 0:
            raise ConfigError(f"{name} must be positive")
    if delta_Q >= 1 or delta_W >= 1:
        raise ConfigError("delta_Q and delta_W must stay below 1 (positive conductance floor)")
    if a_Y > kappa_Y or a_P > kappa_P:
        raise ConfigError("viability needs a_Y <= kappa_Y and a_P <= kappa_P")
    if a_Y < 0 or a_P < 0:
        raise ConfigError("a_Y and a_P must be nonnegative")
    G_L, G_R = complete_graph(3), path_graph(3)
    kernel = GatedMixtureKernel(
        (FixedKernel.from_matrix(K0),),
        (GateSpec(k, sigma_alpha, "Y"),),
        (GateSpec(k, sigma_beta, "P"),),
    )
    H_s, X_s = k3p3_principal()
    L_L, L_R = laplacian_matrix(G_L), laplacian_matrix(G_R)
    # offsets pin the equilibrium at (H*, X*) with gates at their Y = P = 0 value k
    offset_L = alpha_H * H_s + L_L @ H_s - k * K0 @ X_s
    offset_R = alpha_X * X_s + L_R @ X_s - k * K0.T @ H_s
    cfg = ArchitectureConfig(
        G_L=G_L, G_R=G_R, kernel=kernel, d_L=1, d_R=1, n_Y=1, n_P=1, n_M=1, n_h=1, n_u=1,
        policy_sizes=(2,), tau_RL=tau_RL, tau_LR=tau_LR, dt=dt,
        R_L=6.0, R_R=4.0, eps_Q=1.0 - delta_Q, R_Q=1.0 + delta_Q, R_Y=1.0, R_P=1.0, R_M=1.0,
        R_z=5.0, R_theta=5.0, mu_L=alpha_H, mu_R=alpha_X, mu_P=kappa_P,
        C_K_bound=family_budget(kernel),
    )
    nY, nP = n_ry(cfg), n_rp(cfg)
    G_Y = np.zeros((1, nY))
    G_P = np.zeros((1, nP))
    if a_Y:
        G_Y[0, :6] = 1.0 / 3.0
        G_Y[0, 6] = 1.0          # P
    if a_P:
        G_P[0, :6] = [1, 0, -1, 1, 0, -1]
        G_P[0, 6] = 1.0          # Y
    params = FieldParams(
        alpha_H=alpha_H, offset_L=offset_L,
        alpha_X=alpha_X, offset_R=offset_R,
        kappa_Y=kappa_Y, a_Y=a_Y, G_Y=G_Y, H_c=H_s, X_c=X_s,
        mu_P=kappa_P, a_P=a_P, G_P=G_P,
        W_M=np.array([[0.5, 0.5]]),
        lam=(0.5,), eta=(0.05,), lam_reg=0.1,
        a_L=np.zeros(len(G_L.edges)), b_L=np.full(len(G_L.edges), 2.0), q_modulator="valuation",
        W_base=np.full(len(G_R.edges), 1.0 - delta_W), conductance="executive", exec_gain=delta_W,
        S_base=np.eye(N_SUBSYSTEMS), beta_rho=0.1,
        gate_mode="none",
    )
    return cfg, params


def build_k3p3(k=0.05, sigma_alpha=0.05, sigma_beta=0.05, delta_Q=0.05, delta_W=0.05, alpha_H=1.0, alpha_X=1.0,
               kappa_Y=1.0, kappa_P=1.0, tau_RL=0.0, tau_LR=0.0, dt=1e-3):
    """Dense symbolic triangle coupled to a sparse geometric path.

    Conductances are Q = 1 + delta_Q tanh Y and W = 1 + delta_W tanh P, the
    kernel is K0 gated by k + sigma tanh(.) and the reaction offsets put the
    equilibrium at H* = X* = e1 with Y* = P* = 0.
    """
    return _k3p3(k, sigma_alpha, sigma_beta, delta_Q, delta_W, alpha_H, alpha_X, kappa_Y, kappa_P,
                 0.0, 0.0, tau_RL, tau_LR, dt)


def build_k3p3_valuation(k=0.05, sigma_alpha=0.05, sigma_beta=0.05, delta_Q=0.05, delta_W=0.05, alpha_H=1.0,
                         alpha_X=1.0, kappa_Y=1.0, kappa_P=1.0, a_Y=0.5, a_P=0.5, tau_RL=0.0, tau_LR=0.0, dt=1e-3):
    """The K3/P3 example with centred valuative and executive readouts switched on."""
    if not a_Y > 0 or not a_P > 0:
        raise ConfigError("a_Y and a_P must be positive")
    return _k3p3(k, sigma_alpha, sigma_beta, delta_Q, delta_W, alpha_H, alpha_X, kappa_Y, kappa_P,
                 a_Y, a_P, tau_RL, tau_LR, dt)


def k3p3_equilibrium(cfg: ArchitectureConfig, params: FieldParams) -> StateVector:
    """Z* with the auxiliaries at their fixed points under zero inputs."""
    p = resolve_params(cfg, params)
    H, X = k3p3_principal()
    Y, P = np.zeros(1), np.zeros(1)
    Q = cfg.eps_Q + (cfg.R_Q - cfg.eps_Q) / (1 + np.exp(-(p.a_L + 0.0 * p.b_L)))
    W = np.full(len(cfg.G_R.edges), np.nan)
    # constant awareness logits: uniform sparsemax over each in-neighbourhood
    for j in range(cfg.V):
        mask = cfg.G_R.targets == j
        W[mask] = 1.0 / mask.sum()
    rho = np.ones(N_SUBSYSTEMS)
    R = sparsemax(p.S_base + p.beta_rho * rho[None, :], axis=1)
    M = p.C_M * np.tanh(p.W_M @ np.concatenate([H.mean(axis=0), Y])) / math.sqrt(cfg.n_M)
    n = sum(cfg.policy_sizes)
    return StateVector(H=H, X=X, Q=Q, W=W, R=R, Y=Y, P=P, M=M, rho=rho, z=np.zeros(n), theta=np.zeros(n),
                       h=np.zeros(cfg.n_h))


SCENARIOS = {
    "k3p3-default": build_k3p3,
    "k3p3-valuation": build_k3p3_valuation,
}


def scenario(name: str, **overrides):
    key = name.split("/")[-1]
    if key not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}")
    return SCENARIOS[key](**overrides)


# ---- random valid configurations --------------------------------------------


def _random_graph(rng, n):
    kind = rng.integers(3)
    if kind == 0:
        g = complete_graph(n)
    elif kind == 1 or n < 3:
        g = path_graph(n)
    else:
        g = cycle_graph(n)
    return g.with_weights(rng.uniform(0.5, 1.5, len(g.edges)))


def _spectral_scaled(rng, shape, target):
    A = rng.standard_normal(shape)
    s = opnorm(A)
    return A * (target / s) if s > 0 else A


def _random_kernel(rng, T, V, d_L, d_R, scale):
    fam = rng.integers(5)
    if fam == 0:
        return FixedKernel(rng.standard_normal((T, V, d_L, d_R)) * scale / math.sqrt(T * V * d_L * d_R))
    if fam == 1:
        return ConstantSharedKernel(rng.standard_normal((d_L, d_R)) * scale / math.sqrt(T * V * d_L * d_R), T, V)
    if fam == 2:
        W_V = rng.standard_normal((d_L, d_R)) * scale / math.sqrt(T * d_L * d_R)
        return AttentionKernel(W_V, rng.standard_normal((2, d_L)), rng.standard_normal((2, d_R)), T, V)
    r = int(rng.integers(1, 3))
    a = rng.standard_normal((r, T))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = rng.standard_normal((r, V))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    A = rng.standard_normal((r, d_L, d_R)) * scale / (r * math.sqrt(d_L * d_R) * 2)
    if fam == 3:
        return LowRankKernel(a, b, A)
    gates = tuple(GateSpec(0.5, 0.5 * rng.uniform(-1, 1), ("Y", "P")[int(rng.integers(2))]) for _ in range(r))
    return LowRankGatedAttentionKernel(a, b, A, gates)


@dataclass
class RandomScenario:
    cfg: ArchitectureConfig
    params: FieldParams
    seed: int


def random_config(rng: np.random.Generator, max_delay_steps: int = 5) -> RandomScenario:
    """A random configuration satisfying every design condition (awareness and ACh modes on)."""
    seed = int(rng.integers(2 ** 31))
    T, V = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    d_L, d_R = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    n_Y, n_P, n_M = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    pols = tuple(int(m) for m in rng.integers(2, 4, size=int(rng.integers(0, 3))))
    G_L, G_R = _random_graph(rng, T), _random_graph(rng, V)
    if (G_R.weight_matrix() > 0).sum() == 0:
        G_R = path_graph(V)
    kernel = _random_kernel(rng, T, V, d_L, d_R, rng.uniform(0.05, 0.5))
    dt0 = 1e-3
    cfg = ArchitectureConfig(
        G_L=G_L, G_R=G_R, kernel=kernel, d_L=d_L, d_R=d_R, n_Y=n_Y, n_P=n_P, n_M=n_M,
        n_h=int(rng.integers(1, 3)), n_u=int(rng.integers(1, 3)), policy_sizes=pols,
        tau_RL=dt0 * int(rng.integers(0, max_delay_steps + 1)), tau_LR=dt0 * int(rng.integers(0, max_delay_steps + 1)),
        dt=dt0, R_L=float(rng.uniform(0.5, 3)), R_R=float(rng.uniform(0.5, 3)),
        eps_Q=float(rng.uniform(0.05, 0.5)), R_Q=float(rng.uniform(1.0, 2.0)),
        R_Y=float(rng.uniform(0.5, 2)), R_P=float(rng.uniform(0.5, 2)), R_M=1.0,
        R_z=float(rng.uniform(4, 8)), R_theta=float(rng.uniform(1, 5)),
        mu_L=1.0, mu_R=1.0, mu_P=1.0, C_K_bound=family_budget(kernel),
    )
    alpha_H, alpha_X = float(rng.uniform(1, 3)), float(rng.uniform(1, 3))
    kappa_Y, mu_P = float(rng.uniform(0.5, 3)), float(rng.uniform(0.5, 3))
    nc = d_L + d_R + n_Y + n_P + n_M
    E_L, E_R = len(G_L.edges), len(G_R.edges)
    deg = max(int(np.bincount(G_R.targets, minlength=V).max()), 1)
    params = FieldParams(
        alpha_H=alpha_H, A_L=_spectral_scaled(rng, (d_L, d_L), 0.5 * alpha_H), U_L=rng.standard_normal((d_L, nc)),
        offset_L=rng.standard_normal((T, d_L)) * 0.3,
        alpha_X=alpha_X, A_R=_spectral_scaled(rng, (d_R, d_R), 0.3 * alpha_X),
        B_R=_spectral_scaled(rng, (d_R, d_R), 0.3 * alpha_X / math.sqrt(deg)), U_R=rng.standard_normal((d_R, nc)),
        edge_t2=rng.uniform(0, 2, E_R), offset_R=rng.standard_normal((V, d_R)) * 0.3,
        kappa_Y=kappa_Y, a_Y=kappa_Y * cfg.R_Y / math.sqrt(n_Y) * float(rng.uniform(0.2, 1.0)),
        G_Y=rng.standard_normal((n_Y, n_ry(cfg))), W_mu=rng.standard_normal((5, n_Y)), b_mu=rng.standard_normal(5),
        mu_P=mu_P, W_P=_spectral_scaled(rng, (n_P, n_P), 0.5 * mu_P),
        a_P=0.5 * mu_P * cfg.R_P / math.sqrt(n_P) * float(rng.uniform(0.2, 1.0)),
        G_P=rng.standard_normal((n_P, n_rp(cfg))),
        w_gM=rng.standard_normal(n_M + n_Y), b_gM=float(rng.standard_normal()),
        eps_M=float(rng.uniform(0.01, 0.3)), W_M=rng.standard_normal((n_M, d_L + n_Y)), C_M=float(rng.uniform(0.1, 1.0)),
        lam=tuple(float(rng.uniform(0.1, 0.6)) for _ in pols), eta=tuple(float(rng.uniform(0.01, 0.5)) for _ in pols),
        lam_reg=float(rng.uniform(0, 1)), D=1.0, eps_pi=float(rng.uniform(0.01, 0.3)),
        alpha_rel=float(rng.uniform(0.01, 0.5)), rel_kernel=("gaussian", "inverse_quadratic", "laplace")[int(rng.integers(3))],
        kappa_h=float(rng.uniform(0.1, 2)), B_u=1.0, W_h=rng.standard_normal((cfg.n_h, cfg.n_u)),
        a_L=rng.standard_normal(E_L), b_L=rng.uniform(0, 2, E_L), q_modulator="ach",
        W_base=rng.uniform(0.2, 1.0, E_R), gamma_W=float(rng.uniform(0, 1)),
        omega0=rng.standard_normal(E_R), c_omega=float(rng.uniform(0, 1)), nu_NE=rng.standard_normal(E_R),
        S_base=rng.standard_normal((N_SUBSYSTEMS, N_SUBSYSTEMS)),
        S_W=rng.standard_normal((N_SUBSYSTEMS * N_SUBSYSTEMS, n_salience_features(cfg))) * 0.5,
        beta_rho=float(rng.uniform(0, 1)),
        gate_mode="routing", selection="attention" if isinstance(kernel, AttentionKernel) else "none",
    )
    # shrink dt until the explicit step bound holds
    cfg = cfg.with_(dt=min(cfg.dt, step_bound(cfg, params)))
    if cfg.tau_RL or cfg.tau_LR:
        cfg = cfg.with_(tau_RL=cfg.dt * round(cfg.tau_RL / dt0), tau_LR=cfg.dt * round(cfg.tau_LR / dt0))
    return RandomScenario(cfg, params, seed)


# ---- coarse-graining membership ----------------------------------------------


@dataclass
class ClassCheck:
    name: str
    criterion: str
    measured: float
    passed: bool


def coarse_grain_report(cfg: ArchitectureConfig, params: FieldParams, n_pairs: int = 2000, seed: int = 0,
                        reference: StateVector | None = None) -> list[ClassCheck]:
    """Membership of the nine operator classes, each with its measured constant."""
    from .stability import measured_dissipativity

    p = resolve_params(cfg, params)
    rng = np.random.default_rng(seed)
    mu = measured_dissipativity(cfg, p, n_pairs=n_pairs, rng=rng, reference=reference)
    flags = check_assumptions(cfg, cfg.kernel, p)
    out = [
        ClassCheck("A_L", "sampled one-sided constant of F_L >= 0.9 mu_L", mu["F_L"], mu["F_L"] >= 0.9 * cfg.mu_L),
        ClassCheck("A_R", "sampled one-sided constant of F_R >= 0.9 mu_R", mu["F_R"], mu["F_R"] >= 0.9 * cfg.mu_R),
    ]
    budget = family_budget(cfg.kernel)
    out.append(ClassCheck("A_K", "|K|_HS <= budget <= C_K", budget,
                          bool(flags.get("A7", False)) and budget <= cfg.C_K_bound + 1e-12))
    conn_L = cfg.G_L.is_connected()
    out.append(ClassCheck("A_QL", "eps_Q > 0 on a connected support", cfg.eps_Q, cfg.eps_Q > 0 and conn_L))
    wmin = float(np.min(p.W_base))
    conn_R = cfg.G_R.with_weights(p.W_base).is_connected()
    out.append(ClassCheck("A_WR", "backbone floor > 0 on a connected support", wmin, wmin > 0 and conn_R))
    # routing: sup over sampled reachable routing matrices of |gain R|_op
    worst = 0.0
    for _ in range(200):
        rho = rng.uniform(0, 1, N_SUBSYSTEMS)
        S = p.S_base + p.beta_rho * rho[None, :]
        if np.any(p.S_W):
            from .fields import n_salience_features as nsf
            S = S + (p.S_W @ rng.standard_normal(nsf(cfg))).reshape(S.shape)
        worst = max(worst, opnorm(p.routing_gain * sparsemax(S, axis=1)))
    out.append(ClassCheck("A_RTheta", "|gamma_R R|_op < 1", worst, worst < 1))
    nH, nX = cfg.T * cfg.d_L, cfg.V * cfg.d_R
    lipY = p.a_Y * opnorm(p.G_Y[:, :nH + nX])
    out.append(ClassCheck("A_Y", "Lip(G_Y) < kappa_Y", lipY, lipY < p.kappa_Y))
    prod = max([e * p.lam_reg for e in p.eta], default=0.0)
    out.append(ClassCheck("A_theta", "eta lam_reg < 1", prod, prod < 1))
    out.append(ClassCheck("A_P", "mu_P > 0 and |W_P| < mu_P", mu["P"], cfg.mu_P > 0 and opnorm(p.W_P) < p.mu_P
                          and mu["P"] > 0))
    return out


def random_history(cfg: ArchitectureConfig, rng: np.random.Generator) -> np.ndarray:
    """Chronological history rows moving linearly between two random domain points.

    Every row stays in the (convex) domain; the result has ``history_depth + 1`` rows.
    """
    from .state import random_state

    a = random_state(cfg, rng).to_flat(cfg.layout)
    b = random_state(cfg, rng).to_flat(cfg.layout)
    s = np.linspace(0.0, 1.0, cfg.history_depth + 1)[:, None]
    return (1 - s) * a + s * b
