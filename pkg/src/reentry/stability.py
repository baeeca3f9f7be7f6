"""Stability certificates: small gain, radial margins, Lyapunov-Krasovskii checks."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .coupling import GatedMixtureKernel, LowRankGatedAttentionKernel, family_budget, hs_norm
from .fields import (ACH, FieldParams, laplacian_op_bound, n_ry, opnorm, resolve_params,
                     symbolic_reaction, geometric_reaction, executive_rhs, message_matrix)
from .graphs import laplacian_matrix
from .state import (ArchitectureConfig, ConfigError, HistoryBuffer, StateVector, check_assumptions)


def coupling_constant(cfg: ArchitectureConfig) -> float:
    """C_K: the family budget, a state-uniform bound on the kernel HS norm."""
    return family_budget(cfg.kernel)


def small_gain_check(C_K: float, mu_L: float, mu_R: float) -> tuple[bool, float, float]:
    if mu_L <= 0 or mu_R <= 0:
        raise ValueError("dissipativity constants must be positive")
    a_L = mu_L / 2 - C_K ** 2 / (2 * mu_R)
    a_R = mu_R / 2 - C_K ** 2 / (2 * mu_L)
    return bool(C_K ** 2 < mu_L * mu_R), a_L, a_R


def radial_margin_check(eta_L: float, eta_R: float, R_L: float, R_R: float, C_K: float) -> bool:
    if R_L <= 0 or R_R <= 0:
        raise ValueError("radii must be positive")
    return bool(eta_L >= R_L * C_K * R_R and eta_R >= R_R * C_K * R_L)


def radial_margins(cfg: ArchitectureConfig, params: FieldParams) -> tuple[float, float]:
    """Lower bounds on -<H, F_L(H)> at |H| = R_L and the analogue for X (Laplacian terms only help)."""
    p = resolve_params(cfg, params)
    R_L = cfg.R_L
    R_X = cfg.R_R * math.sqrt(cfg.V)
    phiL = math.sqrt(cfg.T * cfg.d_L) if (np.any(p.A_L) or np.any(p.U_L)) else 0.0
    phiR = math.sqrt(cfg.V * cfg.d_R) if (np.any(p.A_R) or np.any(p.B_R) or np.any(p.U_R)) else 0.0
    eta_L = p.alpha_H * R_L ** 2 - R_L * (np.linalg.norm(p.offset_L) + phiL)
    eta_R = p.alpha_X * R_X ** 2 - R_X * (np.linalg.norm(p.offset_R) + phiR)
    return float(eta_L), float(eta_R)


def _centered_norms(rows, cfg, zstar):
    lay = cfg.layout
    d = rows - zstar
    eH = (d[:, lay.slices["H"]] ** 2).sum(axis=1)
    eX = (d[:, lay.slices["X"]] ** 2).sum(axis=1)
    eP = (d[:, lay.slices["P"]] ** 2).sum(axis=1)
    return eH, eX, eP


def _window_trapezoid(e, n, dt):
    """Trapezoid integral of e over the trailing n intervals, for every index >= n."""
    if n == 0:
        return np.zeros(len(e))
    c = np.concatenate([[0.0], np.cumsum(e)])
    k = np.arange(n, len(e))
    total = c[k + 1] - c[k - n]
    out = np.full(len(e), np.nan)
    out[n:] = dt * (total - 0.5 * (e[k - n] + e[k]))
    return out


def lyapunov_series(rows, cfg: ArchitectureConfig, C_K: float, mu_L: float, mu_R: float, zstar,
                    n_RL: int, n_LR: int) -> np.ndarray:
    """V at every row that has a full delay window behind it (NaN before)."""
    zstar = zstar.to_flat(cfg.layout) if isinstance(zstar, StateVector) else np.asarray(zstar)
    eH, eX, eP = _centered_norms(np.asarray(rows), cfg, zstar)
    V = 0.5 * (eH + eX + eP)
    V = V + C_K ** 2 / (2 * mu_L) * _window_trapezoid(eX, n_RL, cfg.dt)
    V = V + C_K ** 2 / (2 * mu_R) * _window_trapezoid(eH, n_LR, cfg.dt)
    V[: max(n_RL, n_LR)] = np.nan
    return V


def lyapunov_value_rows(hist: HistoryBuffer, cfg, C_K, mu_L, mu_R, zstar, n_RL, n_LR) -> float:
    n = max(n_RL, n_LR)
    return float(lyapunov_series(hist.segment(n), cfg, C_K, mu_L, mu_R, zstar, n_RL, n_LR)[-1])


def lyapunov_value(segment, cfg: ArchitectureConfig, C_K: float, mu_L: float, mu_R: float,
                   zstar: StateVector) -> float:
    """Lyapunov-Krasovskii functional of a history segment (HistoryBuffer or chronological rows)."""
    from .state import delay_index

    n_RL = delay_index(cfg.tau_RL, cfg.dt)
    n_LR = delay_index(cfg.tau_LR, cfg.dt)
    rows = segment.chronological() if isinstance(segment, HistoryBuffer) else np.atleast_2d(segment)
    n = max(n_RL, n_LR)
    if len(rows) < n + 1:
        raise ConfigError(f"segment has {len(rows)} rows, the delay windows need {n + 1}")
    return float(lyapunov_series(rows[-(n + 1):], cfg, C_K, mu_L, mu_R, zstar, n_RL, n_LR)[-1])


@dataclass
class MonotonicityResult:
    max_increment: float     # max of dV/dt + alpha_L|H|^2 + alpha_R|X|^2 + mu_P|P|^2
    max_defect: float        # max |discrete dV/dt - exact continuous dV/dt|
    tolerance: float
    passed: bool


def lyapunov_monotonicity(rows, cfg: ArchitectureConfig, params: FieldParams, zstar: StateVector,
                          C_K: float | None = None, c_tol: float = 10.0, velocities=None) -> MonotonicityResult:
    """Check V' <= -alpha_L|H~|^2 - alpha_R|X~|^2 - mu_P|P~|^2 along consecutive rows.

    ``rows`` holds the initial history followed by the trajectory (chronological,
    one row per step).  The test passes when the largest increment is at most
    ``c_tol * dt``.  When the continuous velocities of H, X and P are supplied
    (``velocities`` aligned with ``rows``), the discretisation defect against the
    exact derivative of V is also reported.
    """
    from .state import delay_index

    C = coupling_constant(cfg) if C_K is None else C_K
    mu_L, mu_R, mu_P = cfg.mu_L, cfg.mu_R, cfg.mu_P
    _, a_L, a_R = small_gain_check(C, mu_L, mu_R)
    n_RL = delay_index(cfg.tau_RL, cfg.dt)
    n_LR = delay_index(cfg.tau_LR, cfg.dt)
    rows = np.asarray(rows)
    zf = zstar.to_flat(cfg.layout)
    V = lyapunov_series(rows, cfg, C, mu_L, mu_R, zf, n_RL, n_LR)
    eH, eX, eP = _centered_norms(rows, cfg, zf)
    n0 = max(n_RL, n_LR)
    k = np.arange(n0, len(rows) - 1)
    rate = (V[k + 1] - V[k]) / cfg.dt
    inc = rate + a_L * eH[k] + a_R * eX[k] + mu_P * eP[k]
    max_inc = float(inc.max()) if len(k) else 0.0
    defect = float("nan")
    if velocities is not None and len(k):
        lay = cfg.layout
        d = rows - zf
        vel = np.asarray(velocities)
        inner = sum((d[k][:, lay.slices[c]] * vel[k][:, lay.slices[c]]).sum(axis=1) for c in ("H", "X", "P"))
        exact = inner + C ** 2 / (2 * mu_L) * (eX[k] - eX[k - n_RL]) + C ** 2 / (2 * mu_R) * (eH[k] - eH[k - n_LR])
        defect = float(np.max(np.abs(rate - exact)))
    tol = c_tol * cfg.dt
    return MonotonicityResult(max_inc, defect, tol, bool(max_inc <= tol))


def state_dependent_margin(L_alpha, L_beta, L_Q, L_W, norm_H, norm_X) -> tuple[float, float, float]:
    if min(L_alpha, L_beta, L_Q, L_W, norm_H, norm_X) < 0:
        raise ValueError("inputs must be nonnegative")
    m_L = L_alpha * norm_X + L_Q * norm_H
    m_R = L_beta * norm_H + L_W * norm_X
    return m_L, m_R, max(m_L, m_R)


def executive_crossgain(omega_L, omega_R, c_PH, c_PX, c_PY, L_PhiH, L_PhiX, mu_P):
    cH = c_PH + c_PY * L_PhiH
    cX = c_PX + c_PY * L_PhiX
    M = np.array([
        [omega_L, 0.0, -0.5 * cH],
        [0.0, omega_R, -0.5 * cX],
        [-0.5 * cH, -0.5 * cX, mu_P],
    ])
    return M, bool(np.linalg.eigvalsh(M)[0] > 0)


def one_sided_lipschitz_estimate(F, sampler, n_pairs: int = 10000, rng=None) -> float:
    """max over sampled pairs of <F(u) - F(v), u - v> / |u - v|^2 (pairs with u = v skipped)."""
    rng = np.random.default_rng(0) if rng is None else rng
    best = -math.inf
    for _ in range(n_pairs):
        u, v = sampler(rng), sampler(rng)
        d = np.asarray(u) - np.asarray(v)
        nd = float(np.vdot(d, d))
        if nd == 0.0:
            continue
        best = max(best, float(np.vdot(np.asarray(F(u)) - np.asarray(F(v)), d)) / nd)
    return best


@dataclass
class SlowFastResult:
    max_violation: float
    G1: float
    passed: bool


def slowfast_bound_check(times, Y, phi, kappa_Y: float, tol: float) -> SlowFastResult:
    """Compare |Y - phi| with exp(-kappa t)|Y(0) - phi(0)| + G1 / kappa along a run."""
    times = np.asarray(times)
    Y = np.asarray(Y).reshape(len(times), -1)
    phi = np.asarray(phi).reshape(len(times), -1)
    dphi = np.linalg.norm(np.diff(phi, axis=0), axis=1) / np.diff(times)
    G1 = float(dphi.max()) if len(dphi) else 0.0
    err = np.linalg.norm(Y - phi, axis=1)
    bound = np.exp(-kappa_Y * (times - times[0])) * err[0] + G1 / kappa_Y
    viol = float(np.max(err - bound))
    return SlowFastResult(viol, G1, bool(viol <= tol))


def valuative_readout(cfg: ArchitectureConfig, params: FieldParams):
    """phi(rows) = (a_Y / kappa_Y) tanh(G_Y r) with the stagewise scalars set to zero."""
    p = resolve_params(cfg, params)
    lay = cfg.layout

    def phi(rows):
        rows = np.atleast_2d(rows)
        n = len(rows)
        rin = np.concatenate([
            (lay.view(rows, "H") - p.H_c).reshape(n, -1),
            (lay.view(rows, "X") - p.X_c).reshape(n, -1),
            lay.view(rows, "P"), lay.view(rows, "M"), lay.view(rows, "h"), np.zeros((n, 3)),
        ], axis=1)
        return p.a_Y / p.kappa_Y * np.tanh(rin @ p.G_Y.T)

    return phi


# ---- Lipschitz constants of the state-dependent operators ---------------------


def kernel_lipschitz(cfg: ArchitectureConfig) -> tuple[float, float]:
    k = cfg.kernel
    if isinstance(k, GatedMixtureKernel):
        return k.gate_lipschitz()
    if isinstance(k, LowRankGatedAttentionKernel):
        lip = sum(abs(g.slope) * np.linalg.norm(A) for g, A in zip(k.gates, k.A) if g.source != "const")
        return float(lip), float(lip)
    return 0.0, 0.0


def sampled_kernel_lipschitz(cfg: ArchitectureConfig, n_pairs: int = 200, rng=None) -> tuple[float, float]:
    """Finite-difference estimate of the gate-state Lipschitz constants of K_alpha and K_beta*."""
    rng = np.random.default_rng(0) if rng is None else rng
    k = cfg.kernel
    best_f = best_a = 0.0
    for _ in range(n_pairs):
        Y1, Y2 = rng.uniform(-1, 1, (2, cfg.n_Y)) * cfg.R_Y / math.sqrt(cfg.n_Y)
        P1, P2 = rng.uniform(-1, 1, (2, cfg.n_P)) * cfg.R_P / math.sqrt(cfg.n_P)
        dz = math.sqrt(float(np.sum((Y1 - Y2) ** 2) + np.sum((P1 - P2) ** 2)))
        if dz == 0:
            continue
        df = np.linalg.norm(np.asarray(k.blocks(Y1, P1)) - np.asarray(k.blocks(Y2, P2)))
        da = np.linalg.norm(np.asarray(k.blocks(Y1, P1, adjoint=True)) - np.asarray(k.blocks(Y2, P2, adjoint=True)))
        best_f, best_a = max(best_f, df / dz), max(best_a, da / dz)
    return float(best_f), float(best_a)


def conductance_lipschitz(cfg: ArchitectureConfig, params: FieldParams) -> tuple[float, float]:
    """Bounds on the Lipschitz constants of Delta(Q_L(Z)) and Delta(W_R(Z)) in operator norm."""
    p = resolve_params(cfg, params)
    LL = np.linalg.norm(laplacian_matrix(cfg.G_L.with_weights(np.ones(len(cfg.G_L.edges)))), 2)
    LR = np.linalg.norm(laplacian_matrix(cfg.G_R.with_weights(np.ones(len(cfg.G_R.edges)))), 2)
    dmod = 1.0 if p.q_modulator == "valuation" else float(np.linalg.norm(p.W_mu[ACH])) / 4
    L_Q = LL * (cfg.R_Q - cfg.eps_Q) / 4 * float(np.max(p.b_L, initial=0.0)) * dmod
    if p.conductance == "executive":
        L_W = LR * p.exec_gain
    else:
        deg = max(int(np.max(np.bincount(cfg.G_R.targets, minlength=cfg.V))), 1)
        logit_lip = 4 * abs(p.c_omega) * cfg.R_R * math.sqrt(2 * deg)
        logit_lip += float(np.max(np.abs(p.nu_NE), initial=0.0)) * math.sqrt(len(cfg.G_R.edges)) \
            * float(np.linalg.norm(p.W_mu[2])) / 4
        L_W = LR * p.gamma_W * logit_lip
    return float(L_Q), float(L_W)


def executive_gains(cfg: ArchitectureConfig, params: FieldParams) -> dict:
    """Gain bounds of the executive forcing and of the valuative readout."""
    p = resolve_params(cfg, params)
    nH, nX = cfg.T * cfg.d_L, cfg.V * cfg.d_R
    G_P, G_Y = p.G_P, p.G_Y
    return {
        "c_PH": p.a_P * opnorm(G_P[:, :nH]),
        "c_PX": p.a_P * opnorm(G_P[:, nH:nH + nX]),
        "c_PY": p.a_P * opnorm(G_P[:, nH + nX:nH + nX + cfg.n_Y]),
        "L_PhiH": p.a_Y / p.kappa_Y * opnorm(G_Y[:, :nH]),
        "L_PhiX": p.a_Y / p.kappa_Y * opnorm(G_Y[:, nH:nH + nX]),
    }


@dataclass
class StabilityReport:
    C_K: float
    hs_at_reference: float
    mu_L: float
    mu_R: float
    mu_P: float
    alpha_L: float
    alpha_R: float
    small_gain_ok: bool
    eta_L: float
    eta_R: float
    radial_ok: bool
    radial_note: str
    L_alpha: float
    L_beta: float
    L_alpha_sampled: float
    L_beta_sampled: float
    L_Q: float
    L_W: float
    m_L: float
    m_R: float
    M_sdc: float
    strengthened_ok: bool
    crossgain_matrix: list
    crossgain_ok: bool
    crossgain_frozen_ok: bool
    measured_mu: dict = field(default_factory=dict)
    assumption_flags: dict = field(default_factory=dict)

    def passed(self, require=("small_gain", "crossgain", "assumptions")) -> bool:
        checks = {
            "small_gain": self.small_gain_ok,
            "strengthened": self.strengthened_ok,
            "radial": self.radial_ok,
            "crossgain": self.crossgain_ok,
            "assumptions": all(v is True for v in self.assumption_flags.values() if isinstance(v, bool)),
        }
        return all(checks[r] for r in require)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = []
        for key, val in self.to_dict().items():
            if isinstance(val, dict):
                for k, v in val.items():
                    lines.append(f"{key + '.' + k:<28} {v}")
            elif isinstance(val, list):
                for r, row in enumerate(val):
                    lines.append(f"{key + f'[{r}]':<28} " + "  ".join(f"{x: .6g}" for x in row))
            elif isinstance(val, float):
                lines.append(f"{key:<28} {val:.10g}")
            else:
                lines.append(f"{key:<28} {val}")
        return "\n".join(lines)


def build_report(cfg: ArchitectureConfig, params: FieldParams, reference: StateVector | None = None,
                 n_pairs: int = 2000, seed: int = 0, projected: bool = True) -> StabilityReport:
    """Evaluate every certificate for a configuration.

    ``reference`` is the equilibrium used for the state-dependent margins
    (defaults to the centres of the valuative readout with zero auxiliaries).
    """
    p = resolve_params(cfg, params)
    rng = np.random.default_rng(seed)
    C = coupling_constant(cfg)
    ok, a_L, a_R = small_gain_check(C, cfg.mu_L, cfg.mu_R)
    eta_L, eta_R = radial_margins(cfg, p)
    R_X = cfg.R_R * math.sqrt(cfg.V)
    radial = radial_margin_check(eta_L, eta_R, cfg.R_L, R_X, C)
    note = "margin" if radial else ("satisfied by projection" if projected else "violated")
    H_ref = reference.H if reference is not None else p.H_c
    X_ref = reference.X if reference is not None else p.X_c
    Y_ref = reference.Y if reference is not None else np.zeros(cfg.n_Y)
    P_ref = reference.P if reference is not None else np.zeros(cfg.n_P)
    L_a, L_b = kernel_lipschitz(cfg)
    L_as, L_bs = sampled_kernel_lipschitz(cfg, n_pairs=min(n_pairs, 500), rng=rng)
    L_Q, L_W = conductance_lipschitz(cfg, p)
    m_L, m_R, M = state_dependent_margin(L_a, L_b, L_Q, L_W, float(np.linalg.norm(H_ref)), float(np.linalg.norm(X_ref)))
    g = executive_gains(cfg, p)
    Mx, cg_ok = executive_crossgain(a_L, a_R, g["c_PH"], g["c_PX"], g["c_PY"], g["L_PhiH"], g["L_PhiX"], cfg.mu_P)
    _, frozen_ok = executive_crossgain(a_L, a_R, 0, 0, 0, 0, 0, cfg.mu_P)
    measured = measured_dissipativity(cfg, p, n_pairs=n_pairs, rng=rng, reference=reference)
    return StabilityReport(
        C_K=C, hs_at_reference=float(hs_norm(cfg.kernel, Y_ref, P_ref)),
        mu_L=cfg.mu_L, mu_R=cfg.mu_R, mu_P=cfg.mu_P, alpha_L=a_L, alpha_R=a_R, small_gain_ok=ok,
        eta_L=eta_L, eta_R=eta_R, radial_ok=radial, radial_note=note,
        L_alpha=L_a, L_beta=L_b, L_alpha_sampled=L_as, L_beta_sampled=L_bs, L_Q=L_Q, L_W=L_W,
        m_L=m_L, m_R=m_R, M_sdc=M, strengthened_ok=bool(C ** 2 + M ** 2 < cfg.mu_L * cfg.mu_R),
        crossgain_matrix=Mx.tolist(), crossgain_ok=cg_ok, crossgain_frozen_ok=frozen_ok,
        measured_mu=measured, assumption_flags=check_assumptions(cfg, cfg.kernel, p),
    )


def measured_dissipativity(cfg: ArchitectureConfig, params: FieldParams, n_pairs: int = 10000, rng=None,
                           reference: StateVector | None = None) -> dict:
    """Sampled one-sided constants of F_L, F_R and the executive field (context frozen)."""
    p = resolve_params(cfg, params)
    rng = np.random.default_rng(0) if rng is None else rng
    if reference is None:
        ctx = np.zeros(cfg.d_L + cfg.d_R + cfg.n_Y + cfg.n_P + cfg.n_M)
        W = None
    else:
        from .fields import context_vector
        ctx = context_vector(reference.H, reference.X, reference.Y, reference.P, reference.M)
        W = reference.W
    Msg = message_matrix(W if W is not None else np.zeros(len(cfg.G_R.edges)), p.edge_t2,
                         cfg.G_R.sources, cfg.G_R.targets, cfg.V)

    def ball(shape, R):
        def draw(r):
            g = r.standard_normal(shape)
            return g / np.linalg.norm(g) * R * r.uniform() ** (1 / g.size)
        return draw

    rin = np.zeros(p.G_P.shape[1])
    est_L = one_sided_lipschitz_estimate(lambda H: symbolic_reaction(H, ctx, p), ball((cfg.T, cfg.d_L), cfg.R_L), n_pairs, rng)
    est_R = one_sided_lipschitz_estimate(lambda X: geometric_reaction(X, Msg, ctx, p),
                                         ball((cfg.V, cfg.d_R), cfg.R_R * math.sqrt(cfg.V)), n_pairs, rng)
    est_P = one_sided_lipschitz_estimate(lambda P: executive_rhs(P, rin, p), ball((cfg.n_P,), cfg.R_P), n_pairs, rng)
    return {"F_L": -est_L, "F_R": -est_R, "P": -est_P}
