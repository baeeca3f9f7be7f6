"""State vector, architecture configuration, history ring and domain checks.

The state is stored as one flat float vector so that the history ring is a
single ``(K + 1, D)`` array.  :class:`Layout` maps component names to slices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .coupling import CouplingKernel, hs_norm
from .graphs import WeightedGraph, in_neighborhoods
from .simplex import project_ball, project_rows, sparsemax

TOL = 1e-9
N_SUBSYSTEMS = 5
SUBSYSTEMS = ("symbolic", "geometric", "valuative", "executive", "memory")
SYM, GEO, VAL, EXE, MEM = range(N_SUBSYSTEMS)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ArchitectureConfig:
    G_L: WeightedGraph
    G_R: WeightedGraph
    kernel: CouplingKernel
    d_L: int = 1
    d_R: int = 1
    n_Y: int = 1
    n_P: int = 1
    n_M: int = 1
    n_h: int = 1
    n_u: int = 1
    policy_sizes: tuple = ()
    tau_RL: float = 0.0
    tau_LR: float = 0.0
    dt: float = 1e-3
    R_L: float = 1.0
    R_R: float = 1.0
    eps_Q: float = 0.1
    R_Q: float = 1.0
    R_Y: float = 1.0
    R_P: float = 1.0
    R_M: float = 1.0
    R_z: float = 10.0
    R_theta: float = 10.0
    mu_L: float = 1.0
    mu_R: float = 1.0
    mu_P: float = 1.0
    C_K_bound: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "policy_sizes", tuple(int(m) for m in self.policy_sizes))
        for name in ("d_L", "d_R", "n_Y", "n_P", "n_M", "n_h", "n_u"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if any(m < 2 for m in self.policy_sizes):
            raise ConfigError("every policy needs at least two actions")
        if self.tau_RL < 0 or self.tau_LR < 0 or not math.isfinite(self.tau_RL) or not math.isfinite(self.tau_LR):
            raise ConfigError("delays must be finite and nonnegative")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        k = self.kernel
        if (k.T, k.V, k.d_L, k.d_R) != (self.T, self.V, self.d_L, self.d_R):
            raise ConfigError(f"kernel shape {k.shape} does not match the architecture")
        if set(self.G_R.edges) != {(t, s) for s, t in self.G_R.edges}:
            raise ConfigError("geometric graph support must contain both directions of every edge")

    T = property(lambda self: self.G_L.node_count)
    V = property(lambda self: self.G_R.node_count)
    n_s = property(lambda self: N_SUBSYSTEMS)

    @property
    def tau_max(self) -> float:
        return max(self.tau_RL, self.tau_LR)

    @property
    def history_depth(self) -> int:
        """K: number of past states kept besides the current one (at least one)."""
        return max(1, math.ceil(self.tau_max / self.dt - 1e-12))

    def with_(self, **changes) -> "ArchitectureConfig":
        return replace(self, **changes)

    @property
    def layout(self) -> "Layout":
        cached = self.__dict__.get("_layout")
        if cached is None:
            cached = Layout.for_config(self)
            object.__setattr__(self, "_layout", cached)
        return cached


def delay_index(tau: float, dt: float) -> int:
    if tau < 0 or dt <= 0:
        raise ConfigError("need tau >= 0 and dt > 0")
    # guard against 0.3 / 0.1 = 2.9999999999999996
    return int(math.floor(tau / dt + 1e-9))


COMPONENTS = ("H", "X", "Q", "W", "R", "Y", "P", "M", "rho", "z", "theta", "h")


@dataclass(frozen=True)
class Layout:
    shapes: dict
    slices: dict
    size: int

    @classmethod
    def for_config(cls, cfg: ArchitectureConfig) -> "Layout":
        n_pol = sum(cfg.policy_sizes)
        shapes = {
            "H": (cfg.T, cfg.d_L),
            "X": (cfg.V, cfg.d_R),
            "Q": (len(cfg.G_L.edges),),
            "W": (len(cfg.G_R.edges),),
            "R": (N_SUBSYSTEMS, N_SUBSYSTEMS),
            "Y": (cfg.n_Y,),
            "P": (cfg.n_P,),
            "M": (cfg.n_M,),
            "rho": (N_SUBSYSTEMS,),
            "z": (n_pol,),
            "theta": (n_pol,),
            "h": (cfg.n_h,),
        }
        slices, off = {}, 0
        for name in COMPONENTS:
            n = int(np.prod(shapes[name]))
            slices[name] = slice(off, off + n)
            off += n
        return cls(shapes, slices, off)

    def view(self, flat, name):
        return flat[..., self.slices[name]].reshape(flat.shape[:-1] + self.shapes[name])

    def views(self, flat) -> dict:
        return {name: self.view(flat, name) for name in COMPONENTS}


@dataclass(frozen=True, eq=False)
class StateVector:
    """One point of the state domain.

    ``z`` and ``theta`` hold all policy traces and parameters concatenated
    (policy ``i`` owns the block given by ``policy_sizes``).  ``h`` is the
    homeostatic deviation carried alongside the state.
    """

    H: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    P: np.ndarray
    M: np.ndarray
    rho: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            a = np.array(getattr(self, f.name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, f.name, a)

    def replace(self, **changes) -> "StateVector":
        return replace(self, **changes)

    def to_flat(self, layout: Layout) -> np.ndarray:
        out = np.empty(layout.size)
        for name in COMPONENTS:
            val = getattr(self, name)
            if val.shape != layout.shapes[name]:
                raise ConfigError(f"component {name} has shape {val.shape}, expected {layout.shapes[name]}")
            out[layout.slices[name]] = val.ravel()
        return out

    @classmethod
    def from_flat(cls, flat, layout: Layout) -> "StateVector":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (layout.size,):
            raise ConfigError(f"flat state has shape {flat.shape}, expected ({layout.size},)")
        return cls(**{name: layout.view(flat, name).copy() for name in COMPONENTS})

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in COMPONENTS}

    @classmethod
    def from_dict(cls, data: dict) -> "StateVector":
        unknown = set(data) - set(COMPONENTS)
        if unknown:
            raise ConfigError(f"unknown state keys: {sorted(unknown)}")
        return cls(**{name: data[name] for name in COMPONENTS})


def policy_blocks(cfg: ArchitectureConfig) -> list[slice]:
    out, off = [], 0
    for m in cfg.policy_sizes:
        out.append(slice(off, off + m))
        off += m
    return out


def neighborhood_table(graph: WeightedGraph) -> tuple[np.ndarray, np.ndarray]:
    """Padded ``(V, maxdeg)`` table of incoming edge indices and its validity mask."""
    groups = in_neighborhoods(graph)
    width = max([len(g) for g in groups] + [1])
    idx = np.zeros((graph.node_count, width), dtype=int)
    mask = np.zeros((graph.node_count, width), dtype=bool)
    for i, g in enumerate(groups):
        idx[i, : len(g)] = g
        mask[i, : len(g)] = True
    return idx, mask


def neighborhood_sparsemax(logits: np.ndarray, table) -> np.ndarray:
    """Sparsemax of per-edge logits within every target node's in-neighborhood."""
    idx, mask = table
    padded = np.where(mask, logits[idx], -1e9)
    probs = sparsemax(padded, axis=1)
    out = np.empty_like(logits)
    out[idx[mask]] = probs[mask]
    return out


@dataclass(frozen=True)
class Violation:
    component: str
    bound: str
    observed: float

    def __str__(self):
        return f"{self.component}: {self.bound} (observed {self.observed:.6g})"


def _check_shapes(Z: StateVector, cfg: ArchitectureConfig):
    lay = cfg.layout
    for name in COMPONENTS:
        if getattr(Z, name).shape != lay.shapes[name]:
            raise ConfigError(f"component {name} has shape {getattr(Z, name).shape}, expected {lay.shapes[name]}")


def validate_state(Z: StateVector, cfg: ArchitectureConfig, tol: float = TOL) -> list[Violation]:
    _check_shapes(Z, cfg)
    out: list[Violation] = []
    nH = float(np.linalg.norm(Z.H))
    if nH > cfg.R_L + tol:
        out.append(Violation("H", f"|H|_F <= {cfg.R_L}", nH))
    node_norms = np.linalg.norm(Z.X, axis=1)
    for i in np.flatnonzero(node_norms > cfg.R_R + tol):
        out.append(Violation(f"X[{i}]", f"|e_i| <= {cfg.R_R}", float(node_norms[i])))
    if Z.Q.size:
        if Z.Q.min() < cfg.eps_Q - tol:
            out.append(Violation("Q", f"Q >= {cfg.eps_Q}", float(Z.Q.min())))
        if Z.Q.max() > cfg.R_Q + tol:
            out.append(Violation("Q", f"Q <= {cfg.R_Q}", float(Z.Q.max())))
    for i, g in enumerate(in_neighborhoods(cfg.G_R)):
        if len(g) == 0:
            continue
        w = Z.W[g]
        if w.min() < -tol or abs(w.sum() - 1.0) > tol:
            out.append(Violation(f"W[{i}]", "in-neighborhood on simplex", float(w.sum() if w.min() >= -tol else w.min())))
    for r, row in enumerate(Z.R):
        if row.min() < -tol or abs(row.sum() - 1.0) > tol:
            out.append(Violation(f"R[{r}]", "routing row on simplex", float(row.sum() if row.min() >= -tol else row.min())))
    for name, radius in (("Y", cfg.R_Y), ("P", cfg.R_P), ("M", cfg.R_M)):
        n = float(np.linalg.norm(getattr(Z, name)))
        if n > radius + tol:
            out.append(Violation(name, f"|{name}| <= {radius}", n))
    if Z.rho.size and (Z.rho.min() < -tol or Z.rho.max() > 1 + tol):
        bad = Z.rho.min() if Z.rho.min() < -tol else Z.rho.max()
        out.append(Violation("rho", "rho in [0, 1]", float(bad)))
    for i, blk in enumerate(policy_blocks(cfg)):
        for name, radius in (("z", cfg.R_z), ("theta", cfg.R_theta)):
            n = float(np.linalg.norm(getattr(Z, name)[blk]))
            if n > radius + tol:
                out.append(Violation(f"{name}[{i}]", f"|{name}_i| <= {radius}", n))
    if not all(np.all(np.isfinite(getattr(Z, c))) for c in COMPONENTS):
        out.append(Violation("state", "finite entries", float("nan")))
    return out


def count_violations(rows: np.ndarray, cfg: ArchitectureConfig, tol: float = TOL) -> np.ndarray:
    """Vectorised violation count for a stack of flat states, one count per row."""
    rows = np.atleast_2d(rows)
    lay = cfg.layout
    v = lambda name: lay.view(rows, name)
    n = len(rows)
    bad = np.zeros(n, dtype=int)
    bad += np.linalg.norm(v("H").reshape(n, -1), axis=1) > cfg.R_L + tol
    bad += (np.linalg.norm(v("X"), axis=2) > cfg.R_R + tol).sum(axis=1)
    Q = v("Q")
    if Q.shape[1]:
        bad += (Q < cfg.eps_Q - tol).any(axis=1) | (Q > cfg.R_Q + tol).any(axis=1)
    W = v("W")
    idx, mask = neighborhood_table(cfg.G_R)
    has = mask.any(axis=1)
    sums = np.where(mask[None], W[:, idx], 0.0).sum(axis=2)[:, has]
    bad += (np.abs(sums - 1.0) > tol).sum(axis=1) + (W < -tol).any(axis=1)
    R = v("R")
    bad += (np.abs(R.sum(axis=2) - 1.0) > tol).sum(axis=1) + (R < -tol).any(axis=(1, 2))
    for name, radius in (("Y", cfg.R_Y), ("P", cfg.R_P), ("M", cfg.R_M)):
        bad += np.linalg.norm(v(name), axis=1) > radius + tol
    rho = v("rho")
    bad += ((rho < -tol) | (rho > 1 + tol)).any(axis=1)
    for blk in policy_blocks(cfg):
        bad += np.linalg.norm(v("z")[:, blk], axis=1) > cfg.R_z + tol
        bad += np.linalg.norm(v("theta")[:, blk], axis=1) > cfg.R_theta + tol
    bad += ~np.isfinite(rows).all(axis=1)
    return bad


def project_state(Z: StateVector, cfg: ArchitectureConfig) -> StateVector:
    _check_shapes(Z, cfg)
    W = neighborhood_sparsemax(Z.W, neighborhood_table(cfg.G_R)) if Z.W.size else Z.W
    z, theta = Z.z.copy(), Z.theta.copy()
    for blk in policy_blocks(cfg):
        z[blk] = project_ball(z[blk], cfg.R_z)
        theta[blk] = project_ball(theta[blk], cfg.R_theta)
    out = StateVector(
        H=project_ball(Z.H, cfg.R_L),
        X=project_rows(Z.X, cfg.R_R),
        Q=np.clip(Z.Q, cfg.eps_Q, cfg.R_Q),
        W=_keep_if_valid(Z.W, W),
        R=_keep_if_valid(Z.R, sparsemax(Z.R, axis=1)),
        Y=project_ball(Z.Y, cfg.R_Y),
        P=project_ball(Z.P, cfg.R_P),
        M=project_ball(Z.M, cfg.R_M),
        rho=np.clip(Z.rho, 0.0, 1.0),
        z=z,
        theta=theta,
        h=Z.h,
    )
    return out


def _keep_if_valid(original, projected):
    # sparsemax is exact only up to rounding; keep states that already sit on the simplex
    return original if np.max(np.abs(original - projected), initial=0.0) <= 1e-15 else projected


def uniform_state(cfg: ArchitectureConfig) -> StateVector:
    """All-zero state with Q at its floor and uniform simplices."""
    lay = cfg.layout
    groups = in_neighborhoods(cfg.G_R)
    W = np.zeros(lay.shapes["W"])
    for g in groups:
        if len(g):
            W[g] = 1.0 / len(g)
    zeros = {name: np.zeros(lay.shapes[name]) for name in COMPONENTS}
    zeros.update(Q=np.full(lay.shapes["Q"], cfg.eps_Q), W=W, R=np.full((N_SUBSYSTEMS, N_SUBSYSTEMS), 1.0 / N_SUBSYSTEMS))
    return StateVector(**zeros)


def random_state(cfg: ArchitectureConfig, rng: np.random.Generator, scale: float = 1.0) -> StateVector:
    """A random point of the domain; ``scale`` shrinks the radial components."""
    lay = cfg.layout

    def ball(shape, radius):
        g = rng.standard_normal(shape)
        return g / max(np.linalg.norm(g), 1e-300) * radius * scale * rng.uniform() ** (1.0 / max(g.size, 1))

    X = np.stack([ball((cfg.d_R,), cfg.R_R) for _ in range(cfg.V)])
    idx_tab = neighborhood_table(cfg.G_R)
    z = np.zeros(lay.shapes["z"])
    theta = np.zeros(lay.shapes["theta"])
    for blk in policy_blocks(cfg):
        z[blk] = ball((blk.stop - blk.start,), cfg.R_z)
        theta[blk] = ball((blk.stop - blk.start,), cfg.R_theta)
    return StateVector(
        H=ball(lay.shapes["H"], cfg.R_L),
        X=X,
        Q=rng.uniform(cfg.eps_Q, cfg.R_Q, lay.shapes["Q"]),
        W=neighborhood_sparsemax(rng.standard_normal(lay.shapes["W"]), idx_tab),
        R=sparsemax(rng.standard_normal((N_SUBSYSTEMS, N_SUBSYSTEMS)), axis=1),
        Y=ball((cfg.n_Y,), cfg.R_Y),
        P=ball((cfg.n_P,), cfg.R_P),
        M=ball((cfg.n_M,), cfg.R_M),
        rho=rng.uniform(0, 1, N_SUBSYSTEMS),
        z=z,
        theta=theta,
        h=rng.standard_normal(cfg.n_h) * 0.1 * scale,
    )


class HistoryBuffer:
    """Ring of the K + 1 most recent flat states.

    ``delayed(n)`` returns the state written ``n`` pushes before the newest one.
    """

    def __init__(self, cfg: ArchitectureConfig, states=None, steps_taken: int = 0):
        self.cfg = cfg
        self.layout = cfg.layout
        self.depth = cfg.history_depth
        self.rows = np.empty((self.depth + 1, self.layout.size))
        self.head = -1
        self.steps_taken = steps_taken
        if states is not None:
            self.fill(states)

    def fill(self, states):
        """Initialise from one state (constant history) or a chronological list of K + 1 states."""
        if isinstance(states, StateVector) or (isinstance(states, np.ndarray) and states.ndim == 1):
            states = [states] * (self.depth + 1)
        states = list(states)
        if len(states) != self.depth + 1:
            raise ConfigError(f"history needs {self.depth + 1} states, got {len(states)}")
        for k, s in enumerate(states):
            self.rows[k] = s.to_flat(self.layout) if isinstance(s, StateVector) else s
        self.head = self.depth

    def push(self, flat):
        self.head = (self.head + 1) % (self.depth + 1)
        self.rows[self.head] = flat

    def current(self) -> np.ndarray:
        return self.rows[self.head]

    def delayed(self, n: int) -> np.ndarray:
        if not 0 <= n <= self.depth:
            raise ConfigError(f"delay index {n} exceeds history depth {self.depth}")
        return self.rows[(self.head - n) % (self.depth + 1)]

    def segment(self, n: int) -> np.ndarray:
        """Rows for lags n, n-1, ..., 0 in chronological order."""
        if not 0 <= n <= self.depth:
            raise ConfigError(f"delay index {n} exceeds history depth {self.depth}")
        idx = (self.head - np.arange(n, -1, -1)) % (self.depth + 1)
        return self.rows[idx]

    def chronological(self) -> np.ndarray:
        return self.segment(self.depth)

    def state(self, n: int = 0) -> StateVector:
        return StateVector.from_flat(self.delayed(n).copy(), self.layout)

    def copy(self) -> "HistoryBuffer":
        out = HistoryBuffer(self.cfg, steps_taken=self.steps_taken)
        out.rows[:] = self.rows
        out.head = self.head
        return out

    def to_dict(self) -> dict:
        return {"steps_taken": self.steps_taken, "rows": self.chronological().tolist()}

    @classmethod
    def from_dict(cls, cfg: ArchitectureConfig, data: dict) -> "HistoryBuffer":
        unknown = set(data) - {"steps_taken", "rows"}
        if unknown:
            raise ConfigError(f"unknown checkpoint keys: {sorted(unknown)}")
        buf = cls(cfg, steps_taken=int(data["steps_taken"]))
        buf.fill([np.asarray(r, dtype=float) for r in data["rows"]])
        return buf


def check_assumptions(cfg: ArchitectureConfig, kernel: CouplingKernel | None = None, params=None) -> dict:
    """Machine-checkable assumption flags.

    A3/A4 are verified empirically elsewhere, and A5/A6 hold by construction of
    the built-in surrogate maps, so they are reported as strings.
    """
    kernel = cfg.kernel if kernel is None else kernel
    sizes_ok = all(isinstance(getattr(cfg, n), int) and getattr(cfg, n) > 0
                   for n in ("T", "V", "d_L", "d_R", "n_Y", "n_P", "n_M"))
    a1 = bool(sizes_ok and math.isfinite(cfg.tau_max) and cfg.tau_max >= 0)
    radii = [cfg.R_L, cfg.R_R, cfg.R_Q, cfg.R_Y, cfg.R_P, cfg.R_M, cfg.R_z, cfg.R_theta]
    a2 = bool(all(math.isfinite(r) and r > 0 for r in radii) and 0 < cfg.eps_Q <= cfg.R_Q)
    if params is not None and a2:
        a2 = bool(params.C_M <= cfg.R_M)
    mus = (cfg.mu_L, cfg.mu_R, cfg.mu_P)
    budget = kernel.family_budget()
    a7 = bool(all(m > 0 for m in mus) and hs_norm(kernel) <= budget + 1e-12 and budget <= cfg.C_K_bound)
    return {
        "A1": a1,
        "A2": a2,
        "A3": "sampled Lipschitz estimate",
        "A4": "tangent-cone test along trajectories",
        "A5": "by construction",
        "A6": "by construction",
        "A7": a7,
    }
