"""The eight-stage discrete update and its instrumented variant.

Every stage reads its inputs from a workspace mapping and writes its outputs
back under a symbolic name (``"H^{t+1}"``, ``"C_RL"``, ...).  A recording
workspace logs those reads and writes per stage, which is how the within-step
dependency graph is audited.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import (AttentionKernel, GatedMixtureKernel, LowRankGatedAttentionKernel)
from .fields import (ACH, DA, NE, RELIABILITY_KERNELS, FieldParams, edge_kernel, policy_score,
                     reverse_edges, sigmoid, validate_params)
from .state import (COMPONENTS, GEO, SYM, ArchitectureConfig, ConfigError,
                    StateVector, delay_index, neighborhood_table, policy_blocks)


class StepAborted(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class StepInputs:
    """Exogenous inputs of one step: u^t, u^{t-1}, actions A^t (-1 = none) and outcome r^t."""

    u: np.ndarray
    u_prev: np.ndarray
    actions: tuple = ()
    r: float = 0.0


# Stage order and the table of principal inputs per component.
STAGES = ("derived", "1", "2", "3", "4", "5", "6", "7", "8.1", "8.2", "8.3", "8.4", "8.5")

DEPENDENCY_TABLE = {
    "mu": {"Y^t"},
    "Q^{t+1}": {"mu"},
    "W^{t+1}": {"X^t", "mu"},
    "C": {"X^{t-n}", "H^{t-n}", "R^t"},
    "H^{t+1}": {"Q^{t+1}", "C_RL"},
    "X^{t+1}": {"W^{t+1}", "C_LR"},
    "Y^{t+1}": {"H^{t+1}", "X^{t+1}", "h", "eps_pred", "novelty", "r"},
    "R^{t+1}": {"H^{t+1}", "X^{t+1}", "Y^{t+1}", "rho^t"},
    "rho^{t+1}": {"eps_i"},
    "P^{t+1}": {"dtheta", "Y^{t+1}"},
    "z,theta^{t+1}": {"z^t", "theta^t", "delta", "score"},
    "M^{t+1}": {"H^{t+1}", "Y^{t+1}"},
}

# Rows of the table whose inputs arrive through an intermediate quantity:
# P consumes mu_DA, z^t and theta^t through the parameter step dtheta.
TRANSITIVE_TABLE = {"P^{t+1}": {"delta", "z^t", "theta^t"}}

# Same-step quantities each component is allowed to consume besides the table
# entries: stagewise-derived scalars, the Stage 1-3 outputs for the principal
# fields, and the intermediate delta/score chain of Stage 8.
ALLOWED_EXTRA = {
    "H^{t+1}": {"mu", "W^{t+1}", "C_LR", "B"},
    "X^{t+1}": {"mu", "Q^{t+1}", "C_RL", "B"},
    "P^{t+1}": {"H^{t+1}", "X^{t+1}"},
    "delta": {"Y^{t+1}"},
    "score": set(),
}


class RecordingWorkspace(dict):
    """Dict that logs every read and write together with the active stage."""

    def __init__(self):
        super().__init__()
        self.stage = "inputs"
        self.reads: list[tuple[str, str]] = []
        self.writes: list[tuple[str, str]] = []
        self._owner: dict[str, str] = {}
        self.edges: set[tuple[str, str]] = set()
        self._current_reads: list[str] = []

    def __getitem__(self, key):
        self.reads.append((self.stage, key))
        self._current_reads.append(key)
        return super().__getitem__(key)

    def __setitem__(self, key, value):
        self.writes.append((self.stage, key))
        # anything read earlier in the same stage may feed this write
        for r in self._current_reads:
            if r != key:
                self.edges.add((r, key))
        super().__setitem__(key, value)

    def begin(self, stage):
        self.stage = stage
        self._current_reads = []

    def reads_of(self, name) -> set:
        """Direct inputs recorded for the write of ``name``."""
        return {a for a, b in self.edges if b == name}


class _Plain(dict):
    def begin(self, stage):
        pass


def _fast_sparsemax_rows(z):
    zs = -np.sort(-z, axis=1)
    cssv = np.cumsum(zs, axis=1)
    k = np.arange(1, z.shape[1] + 1)
    ksupp = (1 + k * zs > cssv).sum(axis=1)
    tau = (cssv[np.arange(z.shape[0]), ksupp - 1] - 1) / ksupp
    return np.maximum(z - tau[:, None], 0.0)


class StepEngine:
    """Precomputed operators for one (config, params) pair.

    ``step`` maps (Z^t, Z^{t-1}, delayed rows, inputs) to the flat Z^{t+1}.
    Rows may carry a leading batch axis, in which case independent runs that
    share the input stream advance together.  With ``ref`` set it runs the
    closed principal regime: every input other than H, X, P and the delayed
    coupling is read from ``ref``, and all other components are held at ``ref``.
    """

    def __init__(self, cfg: ArchitectureConfig, params: FieldParams, check_step: bool = True):
        self.cfg = cfg
        self.p = p = validate_params(cfg, params, check_step=check_step)
        self.lay = cfg.layout
        self.n_RL = delay_index(cfg.tau_RL, cfg.dt)
        self.n_LR = delay_index(cfg.tau_LR, cfg.dt)
        if max(self.n_RL, self.n_LR) > cfg.history_depth:
            raise ConfigError("history depth below the delay index")
        T, V = cfg.T, cfg.V
        self.srcL, self.tgtL = cfg.G_L.sources, cfg.G_L.targets
        self.srcR, self.tgtR = cfg.G_R.sources, cfg.G_R.targets
        self.DL = self._difference(T, self.srcL, self.tgtL)
        self.SLt = self._scatter(T, self.srcL)
        self.DR = self._difference(V, self.srcR, self.tgtR)
        self.SRt = self._scatter(V, self.srcR)
        self.revR = reverse_edges(cfg.G_R)
        self.nbr = neighborhood_table(cfg.G_R)
        self.psi = edge_kernel(p.edge_t2)
        self.blocks = policy_blocks(cfg)
        nz = lambda a: a is not None and bool(np.any(a))
        self.has_phiL = nz(p.A_L) or nz(p.U_L)
        self.has_phiR = nz(p.A_R) or nz(p.B_R) or nz(p.U_R)
        self.has_msg = nz(p.B_R)
        self.has_offL = nz(p.offset_L)
        self.has_offR = nz(p.offset_R)
        self.has_rY = bool(p.a_Y) and nz(p.G_Y)
        self.has_rP = bool(p.a_P) and nz(p.G_P)
        self.has_WP = nz(p.W_P)
        self.has_W_logits = nz(p.omega0) or p.c_omega != 0 or nz(p.nu_NE)
        self.has_sal = nz(p.S_W)
        self.has_mem = nz(p.W_M)
        self.rel_phi = RELIABILITY_KERNELS[p.rel_kernel]
        self.err_starts = np.cumsum([0, T * cfg.d_L, V * cfg.d_R, cfg.n_Y, cfg.n_P])
        self.err_dims = np.sqrt(np.array([T * cfg.d_L, V * cfg.d_R, cfg.n_Y, cfg.n_P, cfg.n_M], dtype=float))
        self._prepare_kernel()
        self._W_fixed = None
        if not self.has_W_logits:
            # constant logits: the awareness simplex weights never change
            self._W_fixed = self._W_from_logits(np.zeros((1, len(cfg.G_R.edges))))[0]

    @staticmethod
    def _difference(n, src, tgt):
        D = np.zeros((len(src), n))
        D[np.arange(len(src)), src] += 1.0
        D[np.arange(len(src)), tgt] -= 1.0
        return D

    @staticmethod
    def _scatter(n, src):
        S = np.zeros((n, len(src)))
        S[src, np.arange(len(src))] = 1.0
        return S

    def _prepare_kernel(self):
        k = self.cfg.kernel
        cfg = self.cfg
        shape2 = (cfg.T * cfg.d_L, cfg.V * cfg.d_R)
        self.k_attention = isinstance(k, AttentionKernel)
        self.k_gated = isinstance(k, (GatedMixtureKernel, LowRankGatedAttentionKernel))
        if self.k_attention:
            self.WV = np.asarray(k.W_V)
            return
        if isinstance(k, GatedMixtureKernel):
            stack = np.asarray(k._stack)
            fwd = k.forward_gates
            adj = k.adjoint_gates
        elif isinstance(k, LowRankGatedAttentionKernel):
            stack = np.einsum("rl,ri,rxy->rlixy", k.a, k.b, k.A)
            fwd, adj = k.gates, None
        else:
            stack = np.asarray(k.blocks())[None]
            fwd = adj = None
        self.k_stack = stack.transpose(0, 1, 3, 2, 4).reshape((stack.shape[0],) + shape2)
        self.k_fixed = self.k_stack[0] if not self.k_gated else None
        self.g_fwd = self._gate_arrays(fwd) if fwd is not None else None
        self.g_adj = self._gate_arrays(adj) if adj is not None else None

    @staticmethod
    def _gate_arrays(gates):
        base = np.array([g.base for g in gates])
        slope = np.array([0.0 if g.source == "const" else g.slope for g in gates])
        src = np.array([{"const": 0, "Y": 1, "P": 2}[g.source] for g in gates])
        idx = np.array([g.index for g in gates])
        return base, slope, src, idx

    @staticmethod
    def _gate_values(arrs, Y, P):
        base, slope, src, idx = arrs
        s = np.concatenate([np.zeros((Y.shape[0], 1)), Y, P], axis=1)
        col = np.where(src == 1, 1 + idx, np.where(src == 2, 1 + Y.shape[1] + idx, 0))
        return base + slope * np.tanh(s[:, col])

    def kernel_matrices(self, Y, P):
        """Forward and adjoint matrices (T d_L x V d_R) at one gate state (Y, P)."""
        if not self.k_gated:
            return self.k_fixed, self.k_fixed
        Y, P = np.atleast_2d(Y), np.atleast_2d(P)
        gf = self._gate_values(self.g_fwd, Y, P)[0]
        ga = self._gate_values(self.g_adj, Y, P)[0] if self.g_adj is not None else gf
        return np.tensordot(gf, self.k_stack, axes=1), np.tensordot(ga, self.k_stack, axes=1)

    def _W_from_logits(self, logits):
        idx, mask = self.nbr
        B = logits.shape[0]
        padded = np.where(mask, logits[:, idx], -1e9)
        probs = _fast_sparsemax_rows(padded.reshape(-1, padded.shape[-1])).reshape(padded.shape)
        out = np.empty_like(logits)
        out[:, idx[mask]] = probs[:, mask]
        return out

    def _laplacian(self, D, St, w, F):
        return St @ (w[..., None] * (D @ F))

    def conductance(self, W, P):
        """Symmetric geometric conductance per edge (batched over leading axes)."""
        p = self.p
        if p.conductance == "executive":
            return p.W_base + p.exec_gain * (1.0 + np.tanh(np.asarray(P)[..., :1]))
        return p.W_base + 0.5 * p.gamma_W * (W + W[..., self.revR])

    # ------------------------------------------------------------------

    def step(self, cur, prev, del_RL, del_LR, inputs: StepInputs, ref=None, ws=None,
             project: bool = True, dt: float | None = None) -> np.ndarray:
        cur = np.asarray(cur)
        if cur.ndim == 1:
            out = self.step(cur[None], np.asarray(prev)[None], np.asarray(del_RL)[None], np.asarray(del_LR)[None],
                            inputs, ref=ref, ws=ws, project=project, dt=dt)
            return out[0]
        p, cfg, lay = self.p, self.cfg, self.lay
        dt = cfg.dt if dt is None else dt
        nb = cur.shape[0]
        Z = lay.views(cur)
        Zp = lay.views(prev)
        frozen = ref is not None
        src = lay.views(np.broadcast_to(ref, cur.shape)) if frozen else Z
        ws = _Plain() if ws is None else ws
        for name in COMPONENTS:
            ws[name + "^t"] = Z[name]
            ws[name + "^{t-1}"] = Zp[name]
        ws["X^{t-n}"] = lay.view(del_RL, "X")
        ws["H^{t-n}"] = lay.view(del_LR, "H")
        ws["u^t"], ws["u^{t-1}"], ws["A^t"], ws["r^t"] = inputs.u, inputs.u_prev, inputs.actions, inputs.r

        # stagewise-derived quantities
        ws.begin("derived")
        u = ws["u^t"]
        drive = p.W_h @ u
        nd = math.sqrt(float(drive @ drive))
        if nd > p.B_u:
            drive = drive * (p.B_u / nd)
        ws["h"] = src["h"] if frozen else (1.0 - p.kappa_h * dt) * ws["h^t"] + dt * drive
        du = ws["u^t"] - ws["u^{t-1}"]
        ws["novelty"] = math.sqrt(float(du @ du))
        ws["r"] = float(ws["r^t"])
        parts = [ws[c + "^t"].reshape(nb, -1) - ws[c + "^{t-1}"].reshape(nb, -1) for c in ("H", "X", "Y", "P", "M")]
        diff = np.concatenate(parts, axis=1)
        errs = np.sqrt(np.add.reduceat(diff * diff, self.err_starts, axis=1))
        ws["eps_i"] = errs / self.err_dims
        ws["eps_pred"] = errs[:, GEO]
        if frozen:
            ws["B"] = _context(src["H"], src["X"], src["Y"], src["P"], src["M"])
        else:
            ws["B"] = _context(ws["H^t"], ws["X^t"], ws["Y^t"], ws["P^t"], ws["M^t"])

        # Stage 1: neuromodulatory readout
        ws.begin("1")
        Yg = src["Y"] if frozen else ws["Y^t"]
        ws["mu"] = sigmoid(Yg @ p.W_mu.T + p.b_mu)

        # Stage 2: precision and awareness
        ws.begin("2")
        if frozen:
            ws["Q^{t+1}"] = src["Q"]
            ws["W^{t+1}"] = src["W"]
        else:
            mod = ws["mu"][:, ACH] if p.q_modulator == "ach" else ws["Y^t"][:, 0]
            ws["Q^{t+1}"] = cfg.eps_Q + (cfg.R_Q - cfg.eps_Q) * sigmoid(p.a_L + mod[:, None] * p.b_L)
            X_t = ws["X^t"]
            mu_ne = ws["mu"][:, NE]
            if self._W_fixed is not None:
                ws["W^{t+1}"] = np.broadcast_to(self._W_fixed, (nb, len(self._W_fixed)))
            else:
                d = X_t[:, self.srcR] - X_t[:, self.tgtR]
                logits = p.omega0 - p.c_omega * np.einsum("bed,bed->be", d, d) + mu_ne[:, None] * p.nu_NE
                ws["W^{t+1}"] = self._W_from_logits(logits)

        # Stage 3: delayed interconnector signals
        ws.begin("3")
        X_del, H_del = ws["X^{t-n}"], ws["H^{t-n}"]
        R_g = src["R"] if frozen else ws["R^t"]
        if p.gate_mode == "routing":
            g_RL, g_LR = R_g[:, SYM, GEO, None, None], R_g[:, GEO, SYM, None, None]
        else:
            g_RL = g_LR = 1.0
        Yk = src["Y"] if frozen else ws["Y^t"]
        Pk = src["P"] if frozen else ws["P^t"]
        xs, hs = X_del.reshape(nb, -1), H_del.reshape(nb, -1)
        if self.k_attention:
            if p.selection == "attention":
                Hs = src["H"] if frozen else ws["H^t"]
                Xs = src["X"] if frozen else ws["X^t"]
                C_RL = np.empty((nb, cfg.T, cfg.d_L))
                C_LR = np.empty((nb, cfg.V, cfg.d_R))
                for b in range(nb):
                    alpha, beta = cfg.kernel.attention_weights(Hs[b], Xs[b])
                    C_RL[b] = (alpha @ X_del[b]) @ self.WV.T
                    C_LR[b] = (beta @ H_del[b]) @ self.WV
            else:
                C_RL = np.broadcast_to((X_del.sum(axis=1) @ self.WV.T)[:, None, :], (nb, cfg.T, cfg.d_L))
                C_LR = np.broadcast_to((H_del.sum(axis=1) @ self.WV)[:, None, :], (nb, cfg.V, cfg.d_R))
        elif not self.k_gated:
            C_RL = xs @ self.k_fixed.T
            C_LR = hs @ self.k_fixed
        else:
            gf = self._gate_values(self.g_fwd, Yk, Pk)
            ga = self._gate_values(self.g_adj, Yk, Pk) if self.g_adj is not None else gf
            C_RL = np.einsum("br,brm->bm", gf, np.einsum("rmn,bn->brm", self.k_stack, xs))
            C_LR = np.einsum("br,brn->bn", ga, np.einsum("rmn,bm->brn", self.k_stack, hs))
        ws["C_RL"] = g_RL * C_RL.reshape(nb, cfg.T, cfg.d_L)
        ws["C_LR"] = g_LR * C_LR.reshape(nb, cfg.V, cfg.d_R)

        # Stage 4: symbolic field
        ws.begin("4")
        H = ws["H^t"]
        Q1 = ws["Q^{t+1}"]
        vH = -self._laplacian(self.DL, self.SLt, Q1, H) - p.alpha_H * H + ws["C_RL"]
        if self.has_offL:
            vH = vH + p.offset_L
        if self.has_phiL:
            vH = vH + np.tanh(H @ p.A_L.T + (ws["B"] @ p.U_L.T)[:, None, :])
        H1 = H + dt * vH
        if project:
            H1 = _bball(H1, cfg.R_L)
        ws["H^{t+1}"] = H1

        # Stage 5: geometric field
        ws.begin("5")
        X = ws["X^t"]
        W1 = ws["W^{t+1}"]
        Wbar = self.conductance(W1, src["P"] if frozen else ws["P^t"])
        vX = -self._laplacian(self.DR, self.SRt, Wbar, X) - p.alpha_X * X + ws["C_LR"]
        if self.has_offR:
            vX = vX + p.offset_R
        if self.has_phiR:
            pre = X @ p.A_R.T + (ws["B"] @ p.U_R.T)[:, None, :]
            if self.has_msg:
                Msg = np.zeros((nb, cfg.V, cfg.V))
                Msg[:, self.tgtR, self.srcR] = W1 * self.psi
                pre = pre + Msg @ X @ p.B_R.T
            vX = vX + np.tanh(pre)
        X1 = X + dt * vX
        if project:
            n = np.sqrt(np.einsum("bij,bij->bi", X1, X1))
            over = n > cfg.R_R
            if over.any():
                X1 = X1 * np.where(over, cfg.R_R / np.maximum(n, 1e-300), 1.0)[..., None]
        ws["X^{t+1}"] = X1

        # Stage 6: valuative state
        ws.begin("6")
        if frozen:
            ws["Y^{t+1}"] = src["Y"]
        else:
            Y = ws["Y^t"]
            Hn, Xn = ws["H^{t+1}"], ws["X^{t+1}"]
            aux = (ws["P^t"], ws["M^t"], ws["h"], ws["eps_pred"], ws["novelty"], ws["r"])
            vY = -p.kappa_Y * Y
            if self.has_rY:
                rin = np.concatenate([(Hn - p.H_c).reshape(nb, -1), (Xn - p.X_c).reshape(nb, -1), aux[0], aux[1],
                                      np.broadcast_to(aux[2], (nb, cfg.n_h)), aux[3][:, None],
                                      np.full((nb, 1), aux[4]), np.full((nb, 1), aux[5])], axis=1)
                vY = vY + p.a_Y * np.tanh(rin @ p.G_Y.T)
            Y1 = Y + dt * vY
            ws["Y^{t+1}"] = _bball(Y1, cfg.R_Y) if project else Y1

        # Stage 7: routing
        ws.begin("7")
        if frozen:
            ws["R^{t+1}"] = src["R"]
        else:
            Hn, Xn, Yn, rho = ws["H^{t+1}"], ws["X^{t+1}"], ws["Y^{t+1}"], ws["rho^t"]
            S = p.S_base + p.beta_rho * rho[:, None, :]
            if self.has_sal:
                feats = np.concatenate([Hn.mean(axis=1), Xn.mean(axis=1), Yn], axis=1)
                S = S + (feats @ p.S_W.T).reshape(S.shape)
            ws["R^{t+1}"] = _fast_sparsemax_rows(S.reshape(-1, S.shape[-1])).reshape(S.shape)

        # Stage 8.1: teaching signal
        ws.begin("8.1")
        mu_da = sigmoid(ws["Y^{t+1}"] @ p.W_mu[DA] + p.b_mu[DA])
        ws["delta"] = 2.0 * mu_da - 1.0 if p.signed_delta else mu_da

        # Stage 8.2: reliability
        ws.begin("8.2")
        ws["rho^{t+1}"] = src["rho"] if frozen else (1 - p.alpha_rel) * ws["rho^t"] + p.alpha_rel * self.rel_phi(ws["eps_i"])

        # Stage 8.3: eligibility traces and policy parameters
        ws.begin("8.3")
        z, theta = ws["z^t"], ws["theta^t"]
        if frozen:
            ws["score"] = np.zeros_like(z)
            ws["z^{t+1}"] = src["z"]
            ws["dtheta"] = np.zeros_like(theta)
            ws["theta^{t+1}"] = src["theta"]
        else:
            acts = ws["A^t"]
            score = np.zeros_like(z)
            for i, blk in enumerate(self.blocks):
                a = acts[i] if i < len(acts) else -1
                if a is not None and a >= 0:
                    for b in range(nb):
                        score[b, blk] = policy_score(theta[b, blk], int(a), p.eps_pi)
            ws["score"] = score
            score = ws["score"]
            z1 = np.empty_like(z)
            for i, blk in enumerate(self.blocks):
                zi = p.lam[i] * z[:, blk] + score[:, blk]
                z1[:, blk] = _bball(zi, cfg.R_z) if project else zi
            ws["z^{t+1}"] = z1
            # the parameter step uses the old trace, not the score
            ws.begin("8.3")
            z, theta, delta = ws["z^t"], ws["theta^t"], ws["delta"]
            dth = np.empty_like(theta)
            th1 = np.empty_like(theta)
            for i, blk in enumerate(self.blocks):
                dth[:, blk] = p.eta[i] * (delta[:, None] * z[:, blk] - p.lam_reg * theta[:, blk])
                ti = theta[:, blk] + dth[:, blk]
                th1[:, blk] = _bball(ti, cfg.R_theta) if project else ti
            ws["dtheta"] = dth
            ws["theta^{t+1}"] = th1

        # Stage 8.4: executive state
        ws.begin("8.4")
        P = ws["P^t"]
        Yn, dth = ws["Y^{t+1}"], ws["dtheta"]
        vP = -p.mu_P * P
        if self.has_WP:
            vP = vP + np.tanh(P @ p.W_P.T)
        if self.has_rP:
            Hn = src["H"] if frozen else ws["H^{t+1}"]
            Xn = src["X"] if frozen else ws["X^{t+1}"]
            rin = np.concatenate([(Hn - p.H_c).reshape(nb, -1), (Xn - p.X_c).reshape(nb, -1), Yn, dth], axis=1)
            vP = vP + p.a_P * np.tanh(rin @ p.G_P.T)
        P1 = P + dt * vP
        ws["P^{t+1}"] = _bball(P1, cfg.R_P) if project else P1

        # Stage 8.5: memory consolidation
        ws.begin("8.5")
        if frozen:
            ws["M^{t+1}"] = src["M"]
        else:
            Mt = ws["M^t"]
            g = p.eps_M + (1 - 2 * p.eps_M) * sigmoid(p.b_gM + np.concatenate([Mt, ws["Y^t"]], axis=1) @ p.w_gM)
            Hn, Yn = ws["H^{t+1}"], ws["Y^{t+1}"]
            if self.has_mem:
                write = p.C_M * np.tanh(np.concatenate([Hn.mean(axis=1), Yn], axis=1) @ p.W_M.T) / math.sqrt(cfg.n_M)
            else:
                write = np.zeros_like(Mt)
            ws["M^{t+1}"] = (1 - g)[:, None] * Mt + g[:, None] * write

        out = np.empty((nb, lay.size))
        sl = lay.slices
        for name, key in (("H", "H^{t+1}"), ("X", "X^{t+1}"), ("Q", "Q^{t+1}"), ("W", "W^{t+1}"), ("R", "R^{t+1}"),
                          ("Y", "Y^{t+1}"), ("P", "P^{t+1}"), ("M", "M^{t+1}"), ("rho", "rho^{t+1}"),
                          ("z", "z^{t+1}"), ("theta", "theta^{t+1}")):
            out[:, sl[name]] = ws[key].reshape(nb, -1)
        out[:, sl["h"]] = np.broadcast_to(ws["h"], (nb, cfg.n_h))
        return out

    def stationary_step(self, flat, inputs: StepInputs, dt=None, project=True, ref=None):
        """One step from the constant history at ``flat``."""
        return self.step(flat, flat, flat, flat, inputs, ref=ref, project=project, dt=dt)

    def velocity(self, flat, inputs: StepInputs, ref=None, prev=None, del_RL=None, del_LR=None):
        """Continuous-time velocity of every component: (unprojected update - Z) / dt."""
        prev = flat if prev is None else prev
        out = self.step(flat, prev, flat if del_RL is None else del_RL, flat if del_LR is None else del_LR,
                        inputs, ref=ref, project=False)
        return (out - flat) / self.cfg.dt


def _bnorm(a):
    return np.sqrt(np.einsum("bi,bi->b", a.reshape(a.shape[0], -1), a.reshape(a.shape[0], -1)))


def _bball(x, R):
    """Project each batch entry (all trailing axes together) onto the ball of radius R."""
    n = _bnorm(x)
    if n.max() <= R:
        return x
    scale = np.where(n > R, R / np.maximum(n, 1e-300), 1.0)
    return x * scale.reshape((-1,) + (1,) * (x.ndim - 1))


def _context(H, X, Y, P, M):
    return np.concatenate([H.mean(axis=1), X.mean(axis=1), Y, P, M], axis=1)


def zero_inputs(cfg: ArchitectureConfig) -> StepInputs:
    z = np.zeros(cfg.n_u)
    return StepInputs(z, z, tuple(-1 for _ in cfg.policy_sizes), 0.0)


def discrete_step(history, inputs: StepInputs, cfg: ArchitectureConfig, params: FieldParams,
                  ref: StateVector | None = None, engine: StepEngine | None = None,
                  workspace=None) -> StateVector:
    """Z^{t+1} from the augmented state held in ``history`` (not modified)."""
    eng = engine if engine is not None else StepEngine(cfg, params)
    lay = cfg.layout
    ref_flat = ref.to_flat(lay) if ref is not None else None
    out = eng.step(history.current(), history.delayed(1), history.delayed(eng.n_RL), history.delayed(eng.n_LR),
                   inputs, ref=ref_flat, ws=workspace)
    if not np.all(np.isfinite(out)):
        raise StepAborted("non-finite value after the update")
    return StateVector.from_flat(out, lay)


def instrumented_step(history, inputs: StepInputs, cfg: ArchitectureConfig, params: FieldParams):
    """Run one step with a recording workspace; returns (Z^{t+1}, workspace)."""
    ws = RecordingWorkspace()
    Z1 = discrete_step(history, inputs, cfg, params, workspace=ws)
    return Z1, ws


def dependency_graph(ws: RecordingWorkspace) -> dict[str, set]:
    """Map each written quantity to the set of quantities read while computing it."""
    graph: dict[str, set] = {}
    for a, b in ws.edges:
        graph.setdefault(b, set()).add(a)
    for _, name in ws.writes:
        graph.setdefault(name, set())
    return graph


def is_acyclic(graph: dict[str, set]) -> bool:
    state: dict[str, int] = {}

    def visit(n):
        s = state.get(n, 0)
        if s == 1:
            return False
        if s == 2:
            return True
        state[n] = 1
        ok = all(visit(m) for m in graph.get(n, ()))
        state[n] = 2
        return ok

    return all(visit(n) for n in list(graph))


def ancestors(graph: dict[str, set], name: str) -> set:
    seen: set = set()
    stack = list(graph.get(name, ()))
    while stack:
        n = stack.pop()
        if n not in seen:
            seen.add(n)
            stack.extend(graph.get(n, ()))
    return seen


def audit_dependencies(ws: RecordingWorkspace) -> list[str]:
    """Compare a recorded step against the dependency table; returns the mismatches."""
    graph = dependency_graph(ws)
    problems = []
    if not is_acyclic(graph):
        problems.append("dependency graph has a cycle")
    produced = {name for _, name in ws.writes if not name.endswith("^t") and not name.endswith("^{t-1}")
                and name not in ("X^{t-n}", "H^{t-n}", "u^t", "u^{t-1}", "A^t", "r^t")}
    write_stage = {}
    for stage, name in ws.writes:
        write_stage.setdefault(name, stage)
    order = {s: k for k, s in enumerate(("inputs",) + STAGES)}
    for stage, name in ws.reads:
        if name in produced and order[write_stage[name]] > order[stage]:
            problems.append(f"{name} read in stage {stage} before it is written")
    for comp, needed in DEPENDENCY_TABLE.items():
        if comp == "C":
            got = graph.get("C_RL", set()) | graph.get("C_LR", set())
        elif comp == "z,theta^{t+1}":
            got = graph.get("z^{t+1}", set()) | graph.get("theta^{t+1}", set())
        else:
            got = graph.get(comp, set())
        missing = needed - got
        if missing:
            problems.append(f"{comp} does not read {sorted(missing)}")
        same_step = {g for g in got if g in produced}
        allowed = (needed | ALLOWED_EXTRA.get(comp, set())) & produced
        extra = same_step - allowed
        if extra:
            problems.append(f"{comp} reads same-step quantities outside the table: {sorted(extra)}")
        if comp in TRANSITIVE_TABLE:
            missing = TRANSITIVE_TABLE[comp] - ancestors(graph, comp)
            if missing:
                problems.append(f"{comp} does not depend on {sorted(missing)}")
        for own in (("z^{t+1}", "theta^{t+1}") if comp == "z,theta^{t+1}" else (comp,)):
            if own.endswith("^{t+1}") and own in got:
                problems.append(f"{own} feeds its own computation")
    return problems
