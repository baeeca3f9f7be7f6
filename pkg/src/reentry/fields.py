"""Closed-form Lipschitz surrogates for every vector field of the model.

Each surrogate is tanh of a spectrally bounded linear map (or a logistic
readout), which gives bounded range and an explicit Lipschitz constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .coupling import (AttentionKernel, CouplingKernel, apply_adjoint, apply_forward)
from .graphs import in_neighborhoods, laplacian_from_weights
from .simplex import epsilon_floor, project_ball, softmax, sparsemax
from .state import (GEO, N_SUBSYSTEMS, SYM, ArchitectureConfig, ConfigError,
                    HistoryBuffer, StateVector, delay_index, neighborhood_sparsemax,
                    neighborhood_table)

NEUROMODULATORS = ("DA", "ACh", "NE", "5HT", "OP")
DA, ACH, NE, SHT, OP = range(5)
N_AUX = 3  # eps_pred, novelty, outcome r

RELIABILITY_KERNELS = {
    "gaussian": lambda x: np.exp(-x * x),
    "inverse_quadratic": lambda x: 1.0 / (1.0 + x * x),
    "laplace": lambda x: np.exp(-np.abs(x)),
}


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def opnorm(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(np.linalg.norm(A, 2)) if A.size else 0.0


_ARRAY_FIELDS = {
    "A_L", "U_L", "offset_L", "A_R", "B_R", "U_R", "edge_t2", "offset_R", "G_Y", "H_c", "X_c",
    "W_mu", "b_mu", "W_P", "G_P", "w_gM", "W_M", "W_h", "a_L", "b_L", "W_base", "omega0",
    "nu_NE", "S_base", "S_W",
}


@dataclass(frozen=True, eq=False)
class FieldParams:
    """Parameters of all field surrogates; array fields left as ``None`` mean zero.

    Use :func:`resolve_params` to obtain a copy with every array materialised at
    the shapes of a given architecture.
    """

    # symbolic: F_L(H) = -alpha_H H + tanh(H A_L^T + U_L B) + offset_L
    alpha_H: float = 1.0
    A_L: np.ndarray | None = None
    U_L: np.ndarray | None = None
    offset_L: np.ndarray | None = None
    # geometric: F_R(X) = -alpha_X X + tanh(X A_R^T + Msg(W) X B_R^T + U_R B) + offset_R
    alpha_X: float = 1.0
    A_R: np.ndarray | None = None
    B_R: np.ndarray | None = None
    U_R: np.ndarray | None = None
    edge_t2: np.ndarray | None = None
    offset_R: np.ndarray | None = None
    # valuative: Y' = -kappa_Y Y + a_Y tanh(G_Y r_Y-input)
    kappa_Y: float = 1.0
    a_Y: float = 0.0
    G_Y: np.ndarray | None = None
    H_c: np.ndarray | None = None
    X_c: np.ndarray | None = None
    W_mu: np.ndarray | None = None
    b_mu: np.ndarray | None = None
    # executive: P' = -mu_P P + tanh(W_P P) + a_P tanh(G_P r_P-input)
    mu_P: float = 1.0
    W_P: np.ndarray | None = None
    a_P: float = 0.0
    G_P: np.ndarray | None = None
    # memory
    w_gM: np.ndarray | None = None
    b_gM: float = 0.0
    eps_M: float = 0.05
    W_M: np.ndarray | None = None
    C_M: float = 0.5
    # policies
    lam: tuple = ()
    eta: tuple = ()
    lam_reg: float = 0.1
    D: float = 1.0
    eps_pi: float = 0.1
    signed_delta: bool = True
    # reliability
    alpha_rel: float = 0.1
    rel_kernel: str = "gaussian"
    # homeostatic
    kappa_h: float = 1.0
    B_u: float = 1.0
    W_h: np.ndarray | None = None
    # precision
    a_L: np.ndarray | None = None
    b_L: np.ndarray | None = None
    q_modulator: str = "ach"
    # awareness
    W_base: np.ndarray | None = None
    gamma_W: float = 1.0
    omega0: np.ndarray | None = None
    c_omega: float = 0.0
    nu_NE: np.ndarray | None = None
    conductance: str = "awareness"
    exec_gain: float = 0.0
    # routing
    S_base: np.ndarray | None = None
    S_W: np.ndarray | None = None
    beta_rho: float = 0.0
    routing_gain: float = 0.9
    # interconnector
    gate_mode: str = "routing"
    selection: str = "none"

    def __post_init__(self):
        for name in _ARRAY_FIELDS:
            val = getattr(self, name)
            if val is not None:
                a = np.array(val, dtype=float)
                a.setflags(write=False)
                object.__setattr__(self, name, a)
        object.__setattr__(self, "lam", tuple(float(x) for x in self.lam))
        object.__setattr__(self, "eta", tuple(float(x) for x in self.eta))
        if self.rel_kernel not in RELIABILITY_KERNELS:
            raise ConfigError(f"unknown reliability kernel {self.rel_kernel!r}")
        if self.q_modulator not in ("ach", "valuation"):
            raise ConfigError(f"unknown precision modulator {self.q_modulator!r}")
        if self.conductance not in ("awareness", "executive"):
            raise ConfigError(f"unknown conductance mode {self.conductance!r}")
        if self.gate_mode not in ("routing", "none"):
            raise ConfigError(f"unknown gate mode {self.gate_mode!r}")
        if self.selection not in ("none", "attention"):
            raise ConfigError(f"unknown selection mode {self.selection!r}")

    def replace(self, **changes) -> "FieldParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else (list(v) if isinstance(v, tuple) else v)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FieldParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown field parameter keys: {sorted(unknown)}")
        return cls(**data)


def n_context(cfg: ArchitectureConfig) -> int:
    """Length of the broadcast vector [mean H, mean X, Y, P, M]."""
    return cfg.d_L + cfg.d_R + cfg.n_Y + cfg.n_P + cfg.n_M


def n_ry(cfg: ArchitectureConfig) -> int:
    return cfg.T * cfg.d_L + cfg.V * cfg.d_R + cfg.n_P + cfg.n_M + cfg.n_h + N_AUX


def n_rp(cfg: ArchitectureConfig) -> int:
    return cfg.T * cfg.d_L + cfg.V * cfg.d_R + cfg.n_Y + sum(cfg.policy_sizes)


def n_salience_features(cfg: ArchitectureConfig) -> int:
    return cfg.d_L + cfg.d_R + cfg.n_Y


def param_shapes(cfg: ArchitectureConfig) -> dict:
    E_L, E_R = len(cfg.G_L.edges), len(cfg.G_R.edges)
    nc = n_context(cfg)
    return {
        "A_L": (cfg.d_L, cfg.d_L), "U_L": (cfg.d_L, nc), "offset_L": (cfg.T, cfg.d_L),
        "A_R": (cfg.d_R, cfg.d_R), "B_R": (cfg.d_R, cfg.d_R), "U_R": (cfg.d_R, nc),
        "edge_t2": (E_R,), "offset_R": (cfg.V, cfg.d_R),
        "G_Y": (cfg.n_Y, n_ry(cfg)), "H_c": (cfg.T, cfg.d_L), "X_c": (cfg.V, cfg.d_R),
        "W_mu": (5, cfg.n_Y), "b_mu": (5,),
        "W_P": (cfg.n_P, cfg.n_P), "G_P": (cfg.n_P, n_rp(cfg)),
        "w_gM": (cfg.n_M + cfg.n_Y,), "W_M": (cfg.n_M, cfg.d_L + cfg.n_Y),
        "W_h": (cfg.n_h, cfg.n_u),
        "a_L": (E_L,), "b_L": (E_L,),
        "W_base": (E_R,), "omega0": (E_R,), "nu_NE": (E_R,),
        "S_base": (N_SUBSYSTEMS, N_SUBSYSTEMS), "S_W": (N_SUBSYSTEMS * N_SUBSYSTEMS, n_salience_features(cfg)),
    }


def resolve_params(cfg: ArchitectureConfig, params: FieldParams) -> FieldParams:
    """Fill ``None`` arrays (zeros; the backbone defaults to the graph weights) and check shapes."""
    shapes = param_shapes(cfg)
    changes = {}
    for name, shape in shapes.items():
        val = getattr(params, name)
        if val is None:
            val = np.array(cfg.G_R.weights) if name == "W_base" else np.zeros(shape)
            changes[name] = val
        elif val.shape != shape:
            raise ConfigError(f"field parameter {name} has shape {val.shape}, expected {shape}")
    n_pol = len(cfg.policy_sizes)
    if len(params.lam) != n_pol or len(params.eta) != n_pol:
        raise ConfigError(f"need one trace decay and one step size per policy ({n_pol})")
    return params.replace(**changes) if changes else params


def message_bound(cfg: ArchitectureConfig) -> float:
    deg = max([len(g) for g in in_neighborhoods(cfg.G_R)] + [1])
    return math.sqrt(deg)


def lipschitz_phi_L(params: FieldParams) -> float:
    return opnorm(params.A_L) if params.A_L is not None else 0.0


def lipschitz_phi_R(cfg: ArchitectureConfig, params: FieldParams) -> float:
    a = opnorm(params.A_R) if params.A_R is not None else 0.0
    b = opnorm(params.B_R) if params.B_R is not None else 0.0
    return a + b * message_bound(cfg)


def laplacian_op_bound(graph, max_weight: float) -> float:
    """Gershgorin bound on the Laplacian operator norm for weights up to ``max_weight``."""
    W = graph.weight_matrix() > 0
    deg = np.maximum(W.sum(axis=1), W.sum(axis=0))
    return float(2.0 * max_weight * deg.max()) if deg.size else 0.0


def stiffness(cfg: ArchitectureConfig, params: FieldParams) -> float:
    p = resolve_params(cfg, params)
    if p.conductance == "executive":
        w_max = float(np.max(p.W_base, initial=0.0)) + 2 * p.exec_gain
    else:
        w_max = float(np.max(p.W_base, initial=0.0)) + p.gamma_W
    s_L = laplacian_op_bound(cfg.G_L, cfg.R_Q) + p.alpha_H + lipschitz_phi_L(p)
    s_R = laplacian_op_bound(cfg.G_R, w_max) + p.alpha_X + lipschitz_phi_R(cfg, p)
    s_aux = max(p.kappa_Y + p.a_Y * opnorm(p.G_Y), p.mu_P + opnorm(p.W_P) + p.a_P * opnorm(p.G_P), p.kappa_h)
    return max(s_L, s_R, s_aux)


def step_bound(cfg: ArchitectureConfig, params: FieldParams) -> float:
    """Largest admissible explicit Euler step, 0.1 / stiffness (and below 1 / kappa_h)."""
    return min(0.1 / stiffness(cfg, params), 1.0 / params.kappa_h)


def validate_params(cfg: ArchitectureConfig, params: FieldParams, check_step: bool = True) -> FieldParams:
    """Resolve defaults and reject parameter sets that break a design condition."""
    p = resolve_params(cfg, params)
    errs = []
    if lipschitz_phi_L(p) >= p.alpha_H:
        errs.append("Lip(Phi_L) must be below alpha_H")
    if lipschitz_phi_R(cfg, p) >= p.alpha_X:
        errs.append("Lip(Phi_R) must be below alpha_X")
    if opnorm(p.W_P) >= p.mu_P:
        errs.append("|W_P|_op must be below mu_P")
    if p.a_Y < 0 or p.a_Y * math.sqrt(cfg.n_Y) > p.kappa_Y * cfg.R_Y + 1e-12:
        errs.append("valuative viability needs 0 <= a_Y sqrt(n_Y) <= kappa_Y R_Y")
    if p.a_P < 0 or p.a_P * math.sqrt(cfg.n_P) > (p.mu_P - opnorm(p.W_P)) * cfg.R_P + 1e-12:
        errs.append("executive viability needs a_P sqrt(n_P) <= (mu_P - |W_P|) R_P")
    if np.any(p.b_L < 0):
        errs.append("precision modulation weights b_L must be nonnegative")
    if not 0 < p.eps_M < 0.5:
        errs.append("eps_M must lie in (0, 1/2)")
    if not 0 < p.C_M <= cfg.R_M:
        errs.append("memory write bound needs 0 < C_M <= R_M")
    if any(not 0 < lam < 1 for lam in p.lam):
        errs.append("trace decays must lie in (0, 1)")
    if any(math.sqrt(2.0) > (1 - lam) * cfg.R_z + 1e-12 for lam in p.lam):
        errs.append("trace radius needs (1 - lambda) R_z >= sqrt(2), the score bound")
    if any(e <= 0 for e in p.eta) or p.lam_reg < 0:
        errs.append("policy step sizes must be positive and lam_reg nonnegative")
    if not 0 < p.eps_pi < 1:
        errs.append("policy floor eps_pi must lie in (0, 1)")
    if p.D < 1.0:
        errs.append("policy signal bound D must be at least 1")
    if not 0 < p.alpha_rel < 1:
        errs.append("alpha_rel must lie in (0, 1)")
    if p.kappa_h <= 0 or cfg.dt >= 1.0 / p.kappa_h:
        errs.append("homeostatic step needs 0 < dt < 1/kappa_h")
    if np.any(p.W_base <= 0) or not cfg.G_R.with_weights(p.W_base).is_connected():
        errs.append("awareness backbone must be positive on a connected support")
    if p.exec_gain < 0:
        errs.append("executive conductance gain must be nonnegative")
    if p.gamma_W < 0:
        errs.append("gamma_W must be nonnegative")
    if p.selection == "attention" and not isinstance(cfg.kernel, AttentionKernel):
        errs.append("attention selection needs an attention kernel")
    if not 0 < p.routing_gain < 1:
        errs.append("routing gain must lie in (0, 1)")
    if check_step and cfg.dt > step_bound(cfg, p) * (1 + 1e-12):
        errs.append(f"dt = {cfg.dt} exceeds the explicit step bound {step_bound(cfg, p):.4g}")
    if errs:
        raise ConfigError("; ".join(errs))
    return p


# ---- subsystem maps -------------------------------------------------------


def context_vector(H, X, Y, P, M) -> np.ndarray:
    """Broadcast B: every subsystem's export, concatenated."""
    return np.concatenate([H.mean(axis=0), X.mean(axis=0), Y, P, M])


def neuromod_readout(Y, W_mu, b_mu) -> np.ndarray:
    """mu = sigmoid(W_mu Y + b), ordered (DA, ACh, NE, 5HT, OP)."""
    return sigmoid(np.asarray(W_mu) @ np.asarray(Y, dtype=float) + np.asarray(b_mu))


def precision_field(modulator: float, a_L, b_L, eps_Q: float, R_Q: float) -> np.ndarray:
    """Q = eps_Q + (R_Q - eps_Q) sigmoid(a_L + m b_L), one value per symbolic edge."""
    b_L = np.asarray(b_L, dtype=float)
    if np.any(b_L < 0):
        raise ConfigError("b_L must be nonnegative")
    return eps_Q + (R_Q - eps_Q) * sigmoid(np.asarray(a_L, dtype=float) + modulator * b_L)


def awareness_logits(X, mu_NE: float, params: FieldParams, src, tgt) -> np.ndarray:
    d = X[src] - X[tgt]
    return params.omega0 - params.c_omega * np.einsum("ed,ed->e", d, d) + mu_NE * params.nu_NE


def awareness_field(X, mu_NE: float, cfg: ArchitectureConfig, params: FieldParams):
    """In-neighbourhood simplex weights and the symmetric conductance with backbone.

    Returns ``(W, Wbar)`` where ``Wbar = W_base + gamma_W * (W + W^T) / 2`` per edge.
    """
    p = resolve_params(cfg, params)
    if not cfg.G_R.with_weights(p.W_base).is_connected() or np.any(p.W_base <= 0):
        raise ConfigError("awareness backbone must be positive on a connected support")
    src, tgt = cfg.G_R.sources, cfg.G_R.targets
    W = neighborhood_sparsemax(awareness_logits(np.asarray(X, dtype=float), mu_NE, p, src, tgt),
                               neighborhood_table(cfg.G_R))
    rev = reverse_edges(cfg.G_R)
    return W, p.W_base + 0.5 * p.gamma_W * (W + W[rev])


def executive_conductance(P0: float, W_base, gain: float) -> np.ndarray:
    """Backbone plus the executive overlay gain (1 + tanh P0) >= 0."""
    return np.asarray(W_base) + gain * (1.0 + math.tanh(P0))


def reverse_edges(graph) -> np.ndarray:
    pos = {e: k for k, e in enumerate(graph.edges)}
    return np.array([pos[(t, s)] for s, t in graph.edges], dtype=int)


def edge_kernel(t2) -> np.ndarray:
    """psi(|t_ij|^2) = 1 / (1 + |t_ij|^2): a bounded invariant edge feature."""
    return 1.0 / (1.0 + np.asarray(t2, dtype=float))


def message_matrix(W, t2, src, tgt, V) -> np.ndarray:
    """Aggregation matrix: row j collects W_e psi_e over edges e = (i -> j)."""
    Mx = np.zeros((V, V))
    Mx[tgt, src] = W * edge_kernel(t2)
    return Mx


def symbolic_reaction(H, ctx, params: FieldParams) -> np.ndarray:
    out = -params.alpha_H * H
    if params.offset_L is not None:
        out = out + params.offset_L
    if params.A_L is not None or params.U_L is not None:
        pre = H @ params.A_L.T if params.A_L is not None else np.zeros_like(H)
        if params.U_L is not None:
            pre = pre + params.U_L @ ctx
        out = out + np.tanh(pre)
    return out


def geometric_reaction(X, Msg, ctx, params: FieldParams) -> np.ndarray:
    out = -params.alpha_X * X
    if params.offset_R is not None:
        out = out + params.offset_R
    if params.A_R is not None or params.B_R is not None or params.U_R is not None:
        pre = X @ params.A_R.T if params.A_R is not None else np.zeros_like(X)
        if params.B_R is not None:
            pre = pre + Msg @ X @ params.B_R.T
        if params.U_R is not None:
            pre = pre + params.U_R @ ctx
        out = out + np.tanh(pre)
    return out


def _edge_laplacian(graph, weights, field):
    s, t = graph.sources, graph.targets
    out = np.zeros_like(field)
    np.add.at(out, s, weights[:, None] * (field[s] - field[t]))
    return out


def _conductance(Z: StateVector, cfg, p):
    if p.conductance == "executive":
        return executive_conductance(float(Z.P[0]), p.W_base, p.exec_gain)
    rev = reverse_edges(cfg.G_R)
    return p.W_base + 0.5 * p.gamma_W * (Z.W + Z.W[rev])


def symbolic_rhs(Z: StateVector, C_RL, cfg: ArchitectureConfig, params: FieldParams, ctx=None) -> np.ndarray:
    """Velocity of H: -Delta(Q) H + F_L(H) + C_RL, with Q taken from the state."""
    p = resolve_params(cfg, params)
    ctx = context_vector(Z.H, Z.X, Z.Y, Z.P, Z.M) if ctx is None else ctx
    return -_edge_laplacian(cfg.G_L, Z.Q, Z.H) + symbolic_reaction(Z.H, ctx, p) + np.asarray(C_RL)


def geometric_rhs(Z: StateVector, C_LR, cfg: ArchitectureConfig, params: FieldParams, ctx=None) -> np.ndarray:
    """Velocity of X: -Delta(Wbar) X + F_R(X) + C_LR."""
    p = resolve_params(cfg, params)
    ctx = context_vector(Z.H, Z.X, Z.Y, Z.P, Z.M) if ctx is None else ctx
    Msg = message_matrix(Z.W, p.edge_t2, cfg.G_R.sources, cfg.G_R.targets, cfg.V)
    return -_edge_laplacian(cfg.G_R, _conductance(Z, cfg, p), Z.X) + geometric_reaction(Z.X, Msg, ctx, p) + np.asarray(C_LR)


def ry_input(H, X, P, M, h, eps_pred, novelty, r, p: FieldParams) -> np.ndarray:
    return np.concatenate([(H - p.H_c).ravel(), (X - p.X_c).ravel(), P, M, h, [eps_pred, novelty, r]])


def rp_input(H, X, Y, dtheta, p: FieldParams) -> np.ndarray:
    return np.concatenate([(H - p.H_c).ravel(), (X - p.X_c).ravel(), Y, dtheta])


def valuative_rhs(Y, r_input, params: FieldParams) -> np.ndarray:
    """-kappa_Y Y + a_Y tanh(G_Y r)."""
    if params.a_Y > params.kappa_Y:
        raise ConfigError("a_Y > kappa_Y breaks valuative viability")
    Y = np.asarray(Y, dtype=float)
    out = -params.kappa_Y * Y
    if params.a_Y and params.G_Y is not None:
        out = out + params.a_Y * np.tanh(params.G_Y @ r_input)
    return out


def executive_rhs(P, r_input, params: FieldParams) -> np.ndarray:
    """-mu_P P + tanh(W_P P) + a_P tanh(G_P r)."""
    P = np.asarray(P, dtype=float)
    if params.W_P is not None and opnorm(params.W_P) >= params.mu_P:
        raise ConfigError("|W_P|_op >= mu_P breaks executive dissipativity")
    out = -params.mu_P * P
    if params.W_P is not None:
        out = out + np.tanh(params.W_P @ P)
    if params.a_P and params.G_P is not None:
        out = out + params.a_P * np.tanh(params.G_P @ r_input)
    return out


def homeostatic_step(h, u, kappa_h: float, dt: float, W_h=None, B_u: float = 1.0) -> np.ndarray:
    """h+ = (1 - kappa_h dt) h + dt f_h(u) with f_h(u) = proj_{B_u}(W_h u)."""
    if not 0 < dt < 1.0 / kappa_h:
        raise ConfigError("homeostatic step needs 0 < dt < 1/kappa_h")
    u = np.asarray(u, dtype=float)
    drive = u if W_h is None else np.asarray(W_h) @ u
    return (1.0 - kappa_h * dt) * np.asarray(h, dtype=float) + dt * project_ball(drive, B_u)


def reliability_update(rho: float, err, alpha_rel: float, kernel: str = "gaussian", dim: int | None = None) -> float:
    """(1 - alpha) rho + alpha phi(|err| / sqrt(d))."""
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    err = np.asarray(err, dtype=float)
    d = err.size if dim is None else dim
    x = float(np.linalg.norm(err)) / math.sqrt(max(d, 1))
    return (1.0 - alpha_rel) * rho + alpha_rel * float(RELIABILITY_KERNELS[kernel](x))


def policy_probs(theta, eps_pi: float) -> np.ndarray:
    return epsilon_floor(softmax(theta), eps_pi)


def policy_score(theta, action: int | None, eps_pi: float) -> np.ndarray:
    """Gradient of log pi_eps(action | theta) for the floored softmax policy."""
    theta = np.asarray(theta, dtype=float)
    if action is None or action < 0:
        return np.zeros_like(theta)
    q = softmax(theta)
    pe = (1.0 - eps_pi) * q[action] + eps_pi / theta.size
    onehot = np.zeros_like(theta)
    onehot[action] = 1.0
    return (1.0 - eps_pi) * q[action] * (onehot - q) / pe


def eligibility_policy_update(z, theta, delta: float, score, lam: float, eta: float,
                              lam_reg: float, R_theta: float, D: float = 1.0, R_z: float | None = None):
    """One-step-delayed REINFORCE: the parameter step uses the old trace z."""
    if abs(delta) > D:
        raise ValueError(f"|delta| = {abs(delta)} exceeds D = {D}")
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z_next = lam * z + np.asarray(score, dtype=float)
    if R_z is not None:
        z_next = project_ball(z_next, R_z)
    dtheta = eta * (delta * z - lam_reg * theta)
    return z_next, project_ball(theta + dtheta, R_theta), dtheta


def memory_gate(Y, M, params: FieldParams) -> float:
    eps = params.eps_M
    w = params.w_gM
    logit = params.b_gM + (float(w @ np.concatenate([M, Y])) if w is not None else 0.0)
    return eps + (1.0 - 2.0 * eps) * float(sigmoid(logit))


def memory_write(H_next, Y_next, params: FieldParams, n_M: int) -> np.ndarray:
    """Phi_M = C_M tanh(W_M [mean H; Y]) / sqrt(n_M), so |Phi_M| <= C_M."""
    if params.W_M is None:
        return np.zeros(n_M)
    return params.C_M * np.tanh(params.W_M @ np.concatenate([H_next.mean(axis=0), Y_next])) / math.sqrt(n_M)


def memory_update(M, g_M: float, write, eps_M: float = 0.0) -> np.ndarray:
    if not eps_M - 1e-15 <= g_M <= 1 - eps_M + 1e-15:
        raise ValueError("memory gate outside [eps_M, 1 - eps_M]")
    return (1.0 - g_M) * np.asarray(M, dtype=float) + g_M * np.asarray(write, dtype=float)


def salience_features(H, X, Y) -> np.ndarray:
    return np.concatenate([H.mean(axis=0), X.mean(axis=0), Y])


def routing_update(scores, rho, beta_rho: float) -> np.ndarray:
    """Row-wise sparsemax of the salience scores with column boost beta_rho * rho."""
    scores = np.asarray(scores, dtype=float)
    return sparsemax(scores + beta_rho * np.asarray(rho, dtype=float)[None, :], axis=1)


def interconnector_signals(history: HistoryBuffer, R_Theta, kernel: CouplingKernel, alpha=None, beta=None,
                           gate_state=None, use_gates: bool = True):
    """Delayed, gated coupling signals (C_RL, C_LR) read from the history ring.

    Gates are routing entries: R[symbolic, geometric] scales the node-to-token
    signal and R[geometric, symbolic] the reverse one.  ``gate_state`` is the
    ``(Y, P)`` pair used by state-gated kernels.
    """
    cfg = history.cfg
    n_RL = delay_index(cfg.tau_RL, cfg.dt)
    n_LR = delay_index(cfg.tau_LR, cfg.dt)
    if max(n_RL, n_LR) > history.depth:
        raise ConfigError("history is shorter than the delays")
    lay = history.layout
    X_del = lay.view(history.delayed(n_RL), "X")
    H_del = lay.view(history.delayed(n_LR), "H")
    Y, P = gate_state if gate_state is not None else (None, None)
    R_Theta = np.asarray(R_Theta, dtype=float)
    g_RL = R_Theta[SYM, GEO] if use_gates else 1.0
    g_LR = R_Theta[GEO, SYM] if use_gates else 1.0
    return g_RL * apply_forward(kernel, alpha, X_del, Y, P), g_LR * apply_adjoint(kernel, beta, H_del, Y, P)
