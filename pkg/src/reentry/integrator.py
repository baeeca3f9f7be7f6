"""Explicit Euler integration of the delayed system with projection splitting."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldParams, step_bound, stiffness
from .stages import StepAborted, StepEngine, StepInputs, zero_inputs
from .state import (COMPONENTS, ArchitectureConfig, ConfigError, HistoryBuffer, StateVector, count_violations)


class InputStream:
    """Exogenous inputs indexed by step: u^t, actions A^t and outcome r^t."""

    def __init__(self, n_u: int, n_policies: int, u_fn=None, action_fn=None, r_fn=None):
        self.n_u = n_u
        self.n_policies = n_policies
        self.u_fn = u_fn
        self.action_fn = action_fn
        self.r_fn = r_fn
        self._zero = np.zeros(n_u)

    def u(self, t: int) -> np.ndarray:
        if self.u_fn is None or t < 0:
            return self._zero
        return np.asarray(self.u_fn(t), dtype=float).reshape(self.n_u)

    def at(self, t: int) -> StepInputs:
        acts = tuple(self.action_fn(t)) if self.action_fn is not None else tuple(-1 for _ in range(self.n_policies))
        r = float(self.r_fn(t)) if self.r_fn is not None else 0.0
        return StepInputs(self.u(t), self.u(t - 1), acts, r)

    @property
    def is_constant_zero(self) -> bool:
        return self.u_fn is None and self.action_fn is None and self.r_fn is None

    @classmethod
    def zeros(cls, cfg: ArchitectureConfig) -> "InputStream":
        return cls(cfg.n_u, len(cfg.policy_sizes))

    @classmethod
    def constant(cls, cfg: ArchitectureConfig, value) -> "InputStream":
        v = np.broadcast_to(np.asarray(value, dtype=float), (cfg.n_u,)).copy()
        return cls(cfg.n_u, len(cfg.policy_sizes), u_fn=lambda t: v)

    @classmethod
    def sinusoid(cls, cfg: ArchitectureConfig, amplitude=1.0, period=1.0) -> "InputStream":
        w = 2 * math.pi * cfg.dt / period
        return cls(cfg.n_u, len(cfg.policy_sizes), u_fn=lambda t: np.full(cfg.n_u, amplitude * math.sin(w * t)))

    @classmethod
    def from_csv(cls, cfg: ArchitectureConfig, path) -> "InputStream":
        """Columns u0..u{n_u-1}, optional a0..a{k-1} and r; row t feeds step t (last row repeats)."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no input rows")
        U = np.array([[float(row[f"u{j}"]) for j in range(cfg.n_u)] for row in rows])
        n_pol = len(cfg.policy_sizes)
        A = [tuple(int(row.get(f"a{i}", -1) or -1) for i in range(n_pol)) for row in rows]
        Rr = [float(row.get("r", 0.0) or 0.0) for row in rows]
        last = len(rows) - 1
        return cls(cfg.n_u, n_pol, u_fn=lambda t: U[min(t, last)], action_fn=lambda t: A[min(t, last)],
                   r_fn=lambda t: Rr[min(t, last)])


@dataclass
class Trajectory:
    """Recorded steps: ``times[k]`` and flat ``states[k]`` plus optional diagnostics."""

    cfg: ArchitectureConfig
    times: np.ndarray
    states: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    history: HistoryBuffer | None = None

    def state(self, k: int) -> StateVector:
        return StateVector.from_flat(self.states[k], self.cfg.layout)

    def component(self, name: str) -> np.ndarray:
        return self.cfg.layout.view(self.states, name)

    @property
    def final(self) -> StateVector:
        return self.state(-1)

    def violation_counts(self) -> np.ndarray:
        return count_violations(self.states, self.cfg)

    def column_names(self) -> list[str]:
        lay = self.cfg.layout
        names = ["t"]
        for comp in COMPONENTS:
            n = lay.slices[comp].stop - lay.slices[comp].start
            names += [f"{comp}[{k}]" for k in range(n)]
        return names + list(self.diagnostics)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.column_names())
            diag = [np.asarray(v) for v in self.diagnostics.values()]
            for k in range(len(self.times)):
                w.writerow([repr(float(self.times[k]))] + [repr(float(x)) for x in self.states[k]]
                           + [repr(float(d[k])) for d in diag])

    def to_json(self, path):
        lay = self.cfg.layout
        doc = {
            "times": self.times.tolist(),
            "states": [{c: lay.view(row, c).tolist() for c in COMPONENTS} for row in self.states],
            "diagnostics": {k: np.asarray(v).tolist() for k, v in self.diagnostics.items()},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)


def make_history(cfg: ArchitectureConfig, initial) -> HistoryBuffer:
    if isinstance(initial, HistoryBuffer):
        return initial.copy()
    return HistoryBuffer(cfg, initial)


def integrate(cfg: ArchitectureConfig, params: FieldParams, initial, steps: int, inputs: InputStream | None = None,
              record_every: int = 1, equilibrium: StateVector | None = None, frozen: StateVector | None = None,
              diagnostics: bool = False, engine: StepEngine | None = None) -> Trajectory:
    """Run ``steps`` Euler steps with projection from an initial history.

    ``initial`` is a state (constant history), a list of K + 1 states, or a
    :class:`HistoryBuffer` (which is copied, so checkpoints stay untouched).
    ``frozen`` runs the closed principal regime around that reference state.
    Diagnostics (residual, Lyapunov value, violation count) are computed at
    recorded steps when requested; the Lyapunov value needs ``equilibrium``.
    """
    eng = engine if engine is not None else StepEngine(cfg, params)
    hist = make_history(cfg, initial)
    inputs = InputStream.zeros(cfg) if inputs is None else inputs
    lay = cfg.layout
    ref = frozen.to_flat(lay) if frozen is not None else None
    n_RL, n_LR = eng.n_RL, eng.n_LR
    t0 = hist.steps_taken
    rec_idx = [k for k in range(0, steps + 1, record_every)]
    if rec_idx[-1] != steps:
        rec_idx.append(steps)
    rec_set = set(rec_idx)
    states = np.empty((len(rec_idx), lay.size))
    times = np.empty(len(rec_idx))
    diag = {"residual": [], "lyapunov": [], "violations": []} if diagnostics else {}
    const_inputs = inputs.at(0) if inputs.is_constant_zero else None
    lyap = None
    if diagnostics and equilibrium is not None:
        from .stability import lyapunov_value_rows, coupling_constant
        zstar = equilibrium.to_flat(lay)
        C = coupling_constant(cfg)
        lyap = lambda h: lyapunov_value_rows(h, cfg, C, cfg.mu_L, cfg.mu_R, zstar, n_RL, n_LR)

    def record(j, k):
        states[j] = hist.current()
        times[j] = (t0 + k) * cfg.dt
        if diagnostics:
            cur = hist.current()
            v = eng.velocity(cur, const_inputs or inputs.at(t0 + k), ref=ref)
            diag["residual"].append(float(np.linalg.norm(v)))
            diag["lyapunov"].append(lyap(hist) if lyap else float("nan"))
            diag["violations"].append(int(count_violations(cur, cfg)[0]))

    j = 0
    for k in range(steps + 1):
        if k in rec_set:
            record(j, k)
            j += 1
        if k == steps:
            break
        inp = const_inputs if const_inputs is not None else inputs.at(t0 + k)
        new = eng.step(hist.current(), hist.delayed(1), hist.delayed(n_RL), hist.delayed(n_LR), inp, ref=ref)
        if not math.isfinite(float(new.sum())):
            raise StepAborted(f"non-finite state at step {t0 + k + 1}", step=t0 + k + 1)
        hist.push(new)
        hist.steps_taken += 1
    return Trajectory(cfg, times, states, {k: np.asarray(v) for k, v in diag.items()}, hist)


def residual_norm(Z: StateVector, cfg: ArchitectureConfig, params: FieldParams, engine: StepEngine | None = None,
                  inputs: StepInputs | None = None) -> float:
    """Norm of the full velocity at the constant history sitting at ``Z``."""
    eng = engine if engine is not None else StepEngine(cfg, params, check_step=False)
    inp = zero_inputs(cfg) if inputs is None else inputs
    return float(np.linalg.norm(eng.velocity(Z.to_flat(cfg.layout), inp)))


def principal_residual(Z: StateVector, cfg: ArchitectureConfig, params: FieldParams) -> float:
    eng = StepEngine(cfg, params, check_step=False)
    v = eng.velocity(Z.to_flat(cfg.layout), zero_inputs(cfg))
    lay = cfg.layout
    return float(np.linalg.norm(np.concatenate([v[lay.slices[c]] for c in ("H", "X", "Y", "P")])))


@dataclass
class EquilibriumResult:
    state: StateVector
    residual: float
    iterations: int
    converged: bool


def find_equilibrium(cfg: ArchitectureConfig, params: FieldParams, tol: float = 1e-12, max_iters: int = 200000,
                     initial: StateVector | None = None, damping: float = 0.5, pseudo_dt: float | None = None,
                     inputs: StepInputs | None = None) -> EquilibriumResult:
    """Damped fixed-point iteration Z <- (1 - w) Z + w S(Z) of the stationary step map.

    The step map is evaluated from the constant history at Z with a pseudo time
    step (default: a quarter of the inverse stiffness), which has the same fixed
    points as the physical step.  Returns the best iterate if ``tol`` is not met.
    """
    from .state import uniform_state

    eng = StepEngine(cfg, params, check_step=False)
    lay = cfg.layout
    h = pseudo_dt if pseudo_dt is not None else min(0.25 / stiffness(cfg, params), 0.5 / params.kappa_h)
    inp = zero_inputs(cfg) if inputs is None else inputs
    Z = (uniform_state(cfg) if initial is None else initial).to_flat(lay)
    best, best_res = Z.copy(), math.inf
    for it in range(1, max_iters + 1):
        target = eng.stationary_step(Z, inp, dt=h)
        Z = (1 - damping) * Z + damping * target
        if it % 10 == 0 or it == max_iters:
            res = float(np.linalg.norm(eng.velocity(Z, inp)))
            if res < best_res:
                best, best_res = Z.copy(), res
            if res <= tol:
                return EquilibriumResult(StateVector.from_flat(Z, lay), res, it, True)
    return EquilibriumResult(StateVector.from_flat(best, lay), best_res, max_iters, False)


@dataclass
class EnsembleResult:
    """Final states and recorded principal errors of a batch of runs."""

    cfgs: list
    finals: np.ndarray                 # (n_runs, D)
    times: np.ndarray
    records: np.ndarray                # (n_records, n_runs, D)

    def final_state(self, b: int) -> StateVector:
        return StateVector.from_flat(self.finals[b], self.cfgs[b].layout)


def _same_except_delays(a: ArchitectureConfig, b: ArchitectureConfig) -> bool:
    def same(x, y):
        if x is y:
            return True
        if hasattr(x, "to_dict"):
            return json.dumps(x.to_dict(), sort_keys=True) == json.dumps(y.to_dict(), sort_keys=True)
        return x == y

    return all(same(getattr(a, f), getattr(b, f))
               for f in ("G_L", "G_R", "kernel", "d_L", "d_R", "n_Y", "n_P", "n_M", "n_h", "n_u", "policy_sizes",
                         "dt", "R_L", "R_R", "eps_Q", "R_Q", "R_Y", "R_P", "R_M", "R_z", "R_theta", "mu_L", "mu_R",
                         "mu_P", "C_K_bound"))


def integrate_ensemble(cfgs, params: FieldParams, initials, steps: int, inputs: InputStream | None = None,
                       record_every: int | None = None, engine: StepEngine | None = None) -> EnsembleResult:
    """Advance several runs together, one vectorised step for the whole batch.

    The members may differ in their delays only; each initial entry is a state
    or a chronological array of that member's ``K + 1`` history rows.  The
    result is identical (to rounding) to integrating each member on its own.
    """
    cfgs = list(cfgs)
    if len(cfgs) != len(initials):
        raise ValueError("one initial history per configuration")
    base = cfgs[0]
    for c in cfgs[1:]:
        if not _same_except_delays(base, c):
            raise ConfigError("ensemble members may differ only in their delays")
    deep = max(cfgs, key=lambda c: c.history_depth)
    eng = engine if engine is not None else StepEngine(deep, params)
    lay = base.layout
    nb, K = len(cfgs), deep.history_depth
    ring = np.empty((K + 1, nb, lay.size))
    for b, (c, init) in enumerate(zip(cfgs, initials)):
        if isinstance(init, StateVector):
            ring[:, b] = init.to_flat(lay)
        else:
            rows = np.asarray(init, dtype=float)
            if rows.shape != (c.history_depth + 1, lay.size):
                raise ConfigError(f"member {b}: history needs shape {(c.history_depth + 1, lay.size)}")
            ring[K - c.history_depth:, b] = rows
            ring[:K - c.history_depth, b] = rows[0]
    from .state import delay_index

    n_RL = np.array([delay_index(c.tau_RL, c.dt) for c in cfgs])
    n_LR = np.array([delay_index(c.tau_LR, c.dt) for c in cfgs])
    cols = np.arange(nb)
    inputs = InputStream.zeros(base) if inputs is None else inputs
    const = inputs.at(0) if inputs.is_constant_zero else None
    every = record_every or max(steps, 1)
    rec_t, rec = [], []
    head = K
    for k in range(steps + 1):
        if k % every == 0 or k == steps:
            rec_t.append(k * base.dt)
            rec.append(ring[head].copy())
        if k == steps:
            break
        cur = ring[head]
        new = eng.step(cur, ring[(head - 1) % (K + 1)], ring[(head - n_RL) % (K + 1), cols],
                       ring[(head - n_LR) % (K + 1), cols], const if const is not None else inputs.at(k))
        if not np.isfinite(new).all():
            raise StepAborted(f"non-finite state at step {k + 1}", step=k + 1)
        head = (head + 1) % (K + 1)
        ring[head] = new
    return EnsembleResult(cfgs, ring[head].copy(), np.array(rec_t), np.stack(rec))
