"""Bipartite coupling kernels between the token field and the node field.

A kernel assigns a ``d_L x d_R`` block ``K[l, i]`` to every (token, node) pair.
The forward signal sends node embeddings to tokens,

    C_fwd[l] = sum_i alpha[l, i] K[l, i] @ X[i],

and the adjoint sends token embeddings to nodes,

    C_adj[i] = sum_l beta[i, l] K[l, i].T @ H[l].

Passing ``alpha=None`` (``beta=None``) applies the unweighted operator, which is
what the fixed-operator regime and the K3/P3 example use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simplex import sparsemax

SIMPLEX_TOL = 1e-9


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class GateSpec:
    """Gate ``base + slope * tanh(source[index])``, bounded by ``|base| + |slope|``."""

    base: float
    slope: float = 0.0
    source: str = "const"
    index: int = 0

    def __post_init__(self):
        if self.source not in ("const", "Y", "P"):
            raise KernelError(f"unknown gate source {self.source!r}")
        if not (math.isfinite(self.base) and math.isfinite(self.slope)):
            raise KernelError("gate base and slope must be finite")

    @property
    def bound(self) -> float:
        return abs(self.base) + abs(self.slope)

    def value(self, Y=None, P=None) -> float:
        if self.source == "const" or self.slope == 0.0:
            return self.base
        src = Y if self.source == "Y" else P
        if src is None:
            return self.base
        return self.base + self.slope * float(np.tanh(src[self.index]))

    def lipschitz(self) -> float:
        return abs(self.slope) if self.source != "const" else 0.0

    def to_dict(self):
        return {"base": self.base, "slope": self.slope, "source": self.source, "index": self.index}


class CouplingKernel:
    family: str = ""
    T: int
    V: int
    d_L: int
    d_R: int

    def blocks(self, Y=None, P=None, adjoint: bool = False) -> np.ndarray:
        """Dense ``(T, V, d_L, d_R)`` blocks at the given gate state."""
        raise NotImplementedError

    def hs_norm(self, Y=None, P=None) -> float:
        return float(np.linalg.norm(self.blocks(Y, P)))

    def family_budget(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def shape(self):
        return (self.T, self.V, self.d_L, self.d_R)


def _arr(x, ndim=None):
    a = np.array(x, dtype=float)
    if ndim is not None and a.ndim != ndim:
        raise KernelError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FixedKernel(CouplingKernel):
    """Arbitrary fixed blocks; the most general state-independent kernel."""

    data: np.ndarray
    family = "fixed"

    def __post_init__(self):
        object.__setattr__(self, "data", _arr(self.data, 4))

    T = property(lambda self: self.data.shape[0])
    V = property(lambda self: self.data.shape[1])
    d_L = property(lambda self: self.data.shape[2])
    d_R = property(lambda self: self.data.shape[3])

    @classmethod
    def from_matrix(cls, K) -> "FixedKernel":
        """Scalar blocks (``d_L = d_R = 1``) from a ``T x V`` matrix."""
        K = np.asarray(K, dtype=float)
        return cls(K[:, :, None, None])

    def blocks(self, Y=None, P=None, adjoint=False):
        return self.data

    def family_budget(self):
        return self.hs_norm()

    def to_dict(self):
        return {"family": self.family, "blocks": self.data.tolist()}


@dataclass(frozen=True, eq=False)
class ConstantSharedKernel(CouplingKernel):
    W: np.ndarray
    T: int
    V: int
    family = "constant_shared"

    def __post_init__(self):
        object.__setattr__(self, "W", _arr(self.W, 2))

    d_L = property(lambda self: self.W.shape[0])
    d_R = property(lambda self: self.W.shape[1])

    def blocks(self, Y=None, P=None, adjoint=False):
        return np.broadcast_to(self.W, (self.T, self.V) + self.W.shape)

    def hs_norm(self, Y=None, P=None):
        return float(np.sqrt(self.T * self.V) * np.linalg.norm(self.W))

    def family_budget(self):
        return self.hs_norm()

    def to_dict(self):
        return {"family": self.family, "W": self.W.tolist(), "T": self.T, "V": self.V}


@dataclass(frozen=True, eq=False)
class AttentionKernel(CouplingKernel):
    """Shared value projection ``W_V`` with sparsemax cross-attention selection.

    Without explicit weights the kernel is only defined up to the selection, so
    ``hs_norm`` reports the supremum over simplex selections, sqrt(T) |W_V|_F.
    """

    W_V: np.ndarray
    W_Q: np.ndarray
    W_K: np.ndarray
    T: int
    V: int
    C_W: float = np.inf
    family = "attention_weighted"

    def __post_init__(self):
        for name in ("W_V", "W_Q", "W_K"):
            object.__setattr__(self, name, _arr(getattr(self, name), 2))
        for name in ("W_V", "W_Q", "W_K"):
            if np.linalg.norm(getattr(self, name), 2) > self.C_W + 1e-12:
                raise KernelError(f"spectral norm of {name} exceeds C_W")
        if self.W_Q.shape[0] != self.W_K.shape[0]:
            raise KernelError("query and key projections must share their output dimension")

    d_L = property(lambda self: self.W_V.shape[0])
    d_R = property(lambda self: self.W_V.shape[1])

    def blocks(self, Y=None, P=None, adjoint=False):
        return np.broadcast_to(self.W_V, (self.T, self.V) + self.W_V.shape)

    def hs_norm(self, Y=None, P=None):
        return float(np.sqrt(self.T) * np.linalg.norm(self.W_V))

    def family_budget(self):
        return float(np.sqrt(self.T) * np.linalg.norm(self.W_V))

    def attention_weights(self, H, X):
        """Token-over-node weights alpha (T x V) and node-over-token weights beta (V x T)."""
        q = np.asarray(H) @ self.W_Q.T
        k = np.asarray(X) @ self.W_K.T
        scores = q @ k.T / np.sqrt(self.W_Q.shape[0])
        return sparsemax(scores, axis=1), sparsemax(scores.T, axis=1)

    def to_dict(self):
        return {"family": self.family, "W_V": self.W_V.tolist(), "W_Q": self.W_Q.tolist(),
                "W_K": self.W_K.tolist(), "T": self.T, "V": self.V,
                "C_W": None if np.isinf(self.C_W) else self.C_W}


@dataclass(frozen=True, eq=False)
class LowRankKernel(CouplingKernel):
    """K[l, i] = sum_r a[r, l] b[r, i] A[r]; each a[r], b[r] has norm at most one."""

    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    family = "low_rank"

    def __post_init__(self):
        object.__setattr__(self, "a", _arr(self.a, 2))
        object.__setattr__(self, "b", _arr(self.b, 2))
        object.__setattr__(self, "A", _arr(self.A, 3))
        if not (self.a.shape[0] == self.b.shape[0] == self.A.shape[0]):
            raise KernelError("low-rank factors disagree on the channel count")
        if np.any(np.linalg.norm(self.a, axis=1) > 1 + 1e-12) or np.any(np.linalg.norm(self.b, axis=1) > 1 + 1e-12):
            raise KernelError("low-rank profiles must have norm at most one")

    T = property(lambda self: self.a.shape[1])
    V = property(lambda self: self.b.shape[1])
    d_L = property(lambda self: self.A.shape[1])
    d_R = property(lambda self: self.A.shape[2])

    def blocks(self, Y=None, P=None, adjoint=False):
        return np.einsum("rl,ri,rxy->lixy", self.a, self.b, self.A)

    def hs_norm(self, Y=None, P=None):
        # |sum_r a_r (x) b_r (x) A_r|^2 via channel Gram matrices
        gram = (self.a @ self.a.T) * (self.b @ self.b.T) * np.einsum("rxy,sxy->rs", self.A, self.A)
        return float(np.sqrt(max(gram.sum(), 0.0)))

    def family_budget(self):
        return float(np.linalg.norm(self.A, axis=(1, 2)).sum())

    def to_dict(self):
        return {"family": self.family, "a": self.a.tolist(), "b": self.b.tolist(), "A": self.A.tolist()}


@dataclass(frozen=True, eq=False)
class GatedMixtureKernel(CouplingKernel):
    """sum_r g_r(Z) K_r with 0 <= g_r <= bound_r.

    The adjoint direction may carry its own gates (the K3/P3 example gates the
    forward channel by Y and the adjoint channel by P).
    """

    channels: tuple
    forward_gates: tuple
    adjoint_gates: tuple | None = None
    family = "gated_mixture"
    _stack: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "forward_gates", tuple(self.forward_gates))
        if self.adjoint_gates is not None:
            object.__setattr__(self, "adjoint_gates", tuple(self.adjoint_gates))
            if len(self.adjoint_gates) != len(self.channels):
                raise KernelError("one adjoint gate per channel")
        if not self.channels or len(self.forward_gates) != len(self.channels):
            raise KernelError("one forward gate per channel")
        shapes = {c.shape for c in self.channels}
        if len(shapes) != 1:
            raise KernelError("mixture channels must share their shape")
        stack = np.stack([np.asarray(c.blocks()) for c in self.channels])
        stack.setflags(write=False)
        object.__setattr__(self, "_stack", stack)

    T = property(lambda self: self.channels[0].T)
    V = property(lambda self: self.channels[0].V)
    d_L = property(lambda self: self.channels[0].d_L)
    d_R = property(lambda self: self.channels[0].d_R)

    def gate_values(self, Y=None, P=None, adjoint=False) -> np.ndarray:
        gates = self.adjoint_gates if (adjoint and self.adjoint_gates is not None) else self.forward_gates
        return np.array([g.value(Y, P) for g in gates])

    def gate_bounds(self) -> np.ndarray:
        fwd = np.array([g.bound for g in self.forward_gates])
        if self.adjoint_gates is None:
            return fwd
        return np.maximum(fwd, [g.bound for g in self.adjoint_gates])

    def blocks(self, Y=None, P=None, adjoint=False):
        g = self.gate_values(Y, P, adjoint)
        return np.tensordot(g, self._stack, axes=1)

    def family_budget(self):
        return float(sum(b * c.family_budget() for b, c in zip(self.gate_bounds(), self.channels)))

    def gate_lipschitz(self) -> tuple[float, float]:
        """Lipschitz constants of the forward and adjoint operators in the gate sources."""
        norms = [c.hs_norm() for c in self.channels]
        fwd = sum(g.lipschitz() * n for g, n in zip(self.forward_gates, norms))
        adj_gates = self.adjoint_gates if self.adjoint_gates is not None else self.forward_gates
        adj = sum(g.lipschitz() * n for g, n in zip(adj_gates, norms))
        return float(fwd), float(adj)

    def to_dict(self):
        return {
            "family": self.family,
            "channels": [c.to_dict() for c in self.channels],
            "forward_gates": [g.to_dict() for g in self.forward_gates],
            "adjoint_gates": None if self.adjoint_gates is None else [g.to_dict() for g in self.adjoint_gates],
        }


@dataclass(frozen=True, eq=False)
class LowRankGatedAttentionKernel(CouplingKernel):
    """K[l, i; Z] = sum_r g_r(Z) a[r, l] b[r, i] A[r] with unit-bounded profiles."""

    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    gates: tuple
    family = "low_rank_gated_attention"

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        base = LowRankKernel(self.a, self.b, self.A)
        object.__setattr__(self, "a", base.a)
        object.__setattr__(self, "b", base.b)
        object.__setattr__(self, "A", base.A)
        if len(self.gates) != self.A.shape[0]:
            raise KernelError("one gate per channel")

    T = property(lambda self: self.a.shape[1])
    V = property(lambda self: self.b.shape[1])
    d_L = property(lambda self: self.A.shape[1])
    d_R = property(lambda self: self.A.shape[2])

    def with_profiles(self, a, b) -> "LowRankGatedAttentionKernel":
        return LowRankGatedAttentionKernel(a, b, self.A, self.gates)

    def blocks(self, Y=None, P=None, adjoint=False):
        g = np.array([gt.value(Y, P) for gt in self.gates])
        return np.einsum("r,rl,ri,rxy->lixy", g, self.a, self.b, self.A)

    def hs_norm(self, Y=None, P=None):
        g = np.array([gt.value(Y, P) for gt in self.gates])
        A = g[:, None, None] * self.A
        gram = (self.a @ self.a.T) * (self.b @ self.b.T) * np.einsum("rxy,sxy->rs", A, A)
        return float(np.sqrt(max(gram.sum(), 0.0)))

    def family_budget(self):
        return float(sum(g.bound * np.linalg.norm(A) for g, A in zip(self.gates, self.A)))

    def to_dict(self):
        return {"family": self.family, "a": self.a.tolist(), "b": self.b.tolist(),
                "A": self.A.tolist(), "gates": [g.to_dict() for g in self.gates]}


def hs_norm(kernel, Y=None, P=None) -> float:
    """HS norm of a kernel at (Y, P); a plain matrix is its own (constant) kernel."""
    if isinstance(kernel, np.ndarray):
        return float(np.linalg.norm(kernel))
    return kernel.hs_norm(Y, P)


def family_budget(kernel: CouplingKernel) -> float:
    return kernel.family_budget()


def _check_simplex_rows(w, n_rows, n_cols, name):
    w = np.asarray(w, dtype=float)
    if w.shape != (n_rows, n_cols):
        raise KernelError(f"{name} has shape {w.shape}, expected {(n_rows, n_cols)}")
    if np.any(w < -SIMPLEX_TOL) or np.any(np.abs(w.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise KernelError(f"rows of {name} must lie on the probability simplex")
    return w


def apply_forward(kernel: CouplingKernel, alpha, X, Y=None, P=None, blocks=None) -> np.ndarray:
    """Node-to-token signal, shape ``(T, d_L)``."""
    X = np.asarray(X, dtype=float)
    if X.shape != (kernel.V, kernel.d_R):
        raise KernelError(f"X has shape {X.shape}, expected {(kernel.V, kernel.d_R)}")
    B = kernel.blocks(Y, P) if blocks is None else blocks
    if alpha is None:
        return np.einsum("lixy,iy->lx", B, X)
    alpha = _check_simplex_rows(alpha, kernel.T, kernel.V, "alpha")
    return np.einsum("li,lixy,iy->lx", alpha, B, X)


def apply_adjoint(kernel: CouplingKernel, beta, H, Y=None, P=None, blocks=None) -> np.ndarray:
    """Token-to-node signal through the transposed blocks, shape ``(V, d_R)``."""
    H = np.asarray(H, dtype=float)
    if H.shape != (kernel.T, kernel.d_L):
        raise KernelError(f"H has shape {H.shape}, expected {(kernel.T, kernel.d_L)}")
    B = kernel.blocks(Y, P, adjoint=True) if blocks is None else blocks
    if beta is None:
        return np.einsum("lixy,lx->iy", B, H)
    beta = _check_simplex_rows(beta, kernel.V, kernel.T, "beta")
    return np.einsum("il,lixy,lx->iy", beta, B, H)


def kernel_from_dict(data: dict) -> CouplingKernel:
    data = dict(data)
    family = data.pop("family")

    def expect(keys):
        unknown = set(data) - set(keys)
        if unknown:
            raise KernelError(f"unknown keys for {family}: {sorted(unknown)}")

    def gates(items):
        return tuple(GateSpec(**g) for g in items)

    if family == "fixed":
        expect({"blocks"})
        return FixedKernel(data["blocks"])
    if family == "constant_shared":
        expect({"W", "T", "V"})
        return ConstantSharedKernel(data["W"], int(data["T"]), int(data["V"]))
    if family == "attention_weighted":
        expect({"W_V", "W_Q", "W_K", "T", "V", "C_W"})
        cw = data.get("C_W")
        return AttentionKernel(data["W_V"], data["W_Q"], data["W_K"], int(data["T"]), int(data["V"]),
                               np.inf if cw is None else float(cw))
    if family == "low_rank":
        expect({"a", "b", "A"})
        return LowRankKernel(data["a"], data["b"], data["A"])
    if family == "gated_mixture":
        expect({"channels", "forward_gates", "adjoint_gates"})
        adj = data.get("adjoint_gates")
        return GatedMixtureKernel(tuple(kernel_from_dict(c) for c in data["channels"]),
                                  gates(data["forward_gates"]), None if adj is None else gates(adj))
    if family == "low_rank_gated_attention":
        expect({"a", "b", "A", "gates"})
        return LowRankGatedAttentionKernel(data["a"], data["b"], data["A"], gates(data["gates"]))
    raise KernelError(f"unknown kernel family {family!r}")
