"""Spatial and temporal operators and the three spatial-temporal cells.

Tensors flowing through a cell are node-major, ``(..., N, T, C)``: optional
batch axes, then node, time and feature. Graph matrices act on the node
axis, attention runs along the time axis independently for every node.
Keeping nodes ahead of time lets a graph product run as one contiguous
``(N, N) @ (N, T*C)`` matmul per batch element.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor


class InputError(ValueError):
    """Raised for malformed graph or data inputs."""


class ConfigError(ValueError):
    """Raised when an operator is configured outside its allowed range."""


class CellKind(enum.Enum):
    STP = "spatial-temporal-parallel"
    STT = "spatial-then-temporal"
    TTS = "temporal-then-spatial"

    @property
    def prompt_name(self) -> str:
        return self.value


# lexicographic order used by the space enumeration
CELL_KINDS = (CellKind.STP, CellKind.STT, CellKind.TTS)


@dataclass(frozen=True)
class AdjacencySet:
    A: np.ndarray
    A_hat: np.ndarray
    P_f: np.ndarray
    P_b: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass
class SpatialParams:
    W_g: Tensor
    W_f: Tensor
    W_b: Tensor
    W_adp: Tensor
    E_1: Tensor
    E_2: Tensor
    order: int = 2


@dataclass
class AttnParams:
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    W_O: Tensor
    heads: int = 1


@dataclass
class FfnParams:
    W_1: Tensor
    b_1: Tensor
    W_2: Tensor
    b_2: Tensor


@dataclass
class CellParams:
    kind: CellKind
    spatial: SpatialParams
    temporal: AttnParams
    ffn: FfnParams
    W_m: Tensor | None = None  # 2C x C merge, STP only


def _row_normalize(M: np.ndarray) -> np.ndarray:
    rows = M.sum(axis=1, keepdims=True)
    safe = np.where(rows > 0, rows, 1.0)
    return np.where(rows > 0, M / safe, 0.0)


def build_adjacency_set(A) -> AdjacencySet:
    """Precompute the normalized adjacency and the two transition matrices."""
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"adjacency must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError("adjacency has non-finite entries")
    if np.any(A < 0):
        raise InputError("adjacency has negative entries")
    n = A.shape[0]
    A_tilde = A + np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(A_tilde.sum(axis=1))
    A_hat = d_inv_sqrt[:, None] * A_tilde * d_inv_sqrt[None, :]
    return AdjacencySet(A=A, A_hat=A_hat, P_f=_row_normalize(A), P_b=_row_normalize(A.T))


def adaptive_adjacency(E_1, E_2) -> Tensor:
    """Learned node-to-node weights, ``softmax(relu(E_1 E_2^T))`` row-wise."""
    E_1, E_2 = tn._as_tensor(E_1), tn._as_tensor(E_2)
    if E_1.ndim != 2 or E_2.ndim != 2 or E_1.shape[1] != E_2.shape[1]:
        raise tn.DimensionError(f"embedding shapes {E_1.shape} and {E_2.shape} do not match")
    scores = tn.matmul(E_1, tn.transpose(E_2, (1, 0)))
    return tn.softmax_rows(tn.relu(scores))


def _check_nodes(X: Tensor, adj: AdjacencySet):
    if X.ndim < 3 or X.shape[-3] != adj.n:
        raise tn.DimensionError(f"input {X.shape} does not match a graph of {adj.n} nodes")


def propagate(M, X: Tensor) -> Tensor:
    """Apply an ``N x N`` node-mixing matrix to ``(..., N, T, C)`` input."""
    M = M if isinstance(M, Tensor) else Tensor(M, dtype=X.data.dtype)
    shape = X.shape
    flat = tn.reshape(X, shape[:-2] + (shape[-2] * shape[-1],))
    return tn.reshape(tn.matmul(M, flat), shape)


def mix_gc(X: Tensor, adj: AdjacencySet, p: SpatialParams, A_adp: Tensor | None = None) -> Tensor:
    """One mixed graph convolution step over every time slice.

    ``A_adp`` lets repeated applications share one adaptive adjacency.
    """
    _check_nodes(X, adj)
    if X.shape[-1] != p.W_g.shape[0]:
        raise tn.DimensionError(f"feature size {X.shape[-1]} does not match W_g {p.W_g.shape}")
    if A_adp is None:
        A_adp = adaptive_adjacency(p.E_1, p.E_2)
    out = tn.matmul(propagate(adj.A_hat, X), p.W_g)
    out = tn.add(out, tn.matmul(propagate(adj.P_f, X), p.W_f))
    out = tn.add(out, tn.matmul(propagate(adj.P_b, X), p.W_b))
    return tn.add(out, tn.matmul(propagate(A_adp, X), p.W_adp))


def spatial_op(X: Tensor, adj: AdjacencySet, p: SpatialParams, order: int | None = None,
               max_order: int = 2) -> Tensor:
    """High-order mixed graph convolution; order 0 is the identity."""
    order = p.order if order is None else order
    if order < 0:
        raise ConfigError(f"graph order must be non-negative, got {order}")
    if order > max_order:
        raise ConfigError(f"graph order {order} exceeds the configured maximum {max_order}")
    if order == 0:
        return X
    A_adp = adaptive_adjacency(p.E_1, p.E_2)
    out = X
    for _ in range(order):
        out = mix_gc(out, adj, p, A_adp)
    return out


def linear_attention(X: Tensor, p: AttnParams, last_query_only: bool = False) -> Tensor:
    """Multi-head linear self-attention along the time axis, per node.

    Each head computes ``phi(Q) (phi(K)^T V)`` normalized by
    ``phi(Q) (phi(K)^T 1)``, with ``phi = elu + 1``; heads are concatenated
    and projected back by ``W_O``. No causal mask. With
    ``last_query_only`` only the final step's output is produced (keys and
    values still span the whole window).
    """
    d = p.W_Q.shape[1]
    if d % p.heads:
        raise ConfigError(f"attention dim {d} not divisible by {p.heads} heads")
    if X.ndim < 3:
        raise tn.DimensionError(f"attention expects (..., N, T, C), got {X.shape}")
    dh = d // p.heads
    lead = X.shape[:-2]
    T = X.shape[-2]
    nl = len(lead)
    swap_last = tuple(range(nl + 1)) + (nl + 2, nl + 1)

    def split_heads(t, steps):
        # (..., T, d) -> (..., H, T, dh)
        if p.heads == 1:
            return t
        t = tn.reshape(t, lead + (steps, p.heads, dh))
        return tn.transpose(t, tuple(range(nl)) + (nl + 1, nl, nl + 2))

    X_q = tn.take_last_step(X, -2, keepdims=True) if last_query_only else X
    Tq = X_q.shape[-2]
    q = split_heads(tn.elu_plus_one(tn.matmul(X_q, p.W_Q)), Tq)
    k = split_heads(tn.elu_plus_one(tn.matmul(X, p.W_K)), T)
    v = split_heads(tn.matmul(X, p.W_V), T)
    if p.heads == 1:
        swap_last = tuple(range(nl)) + (nl + 1, nl)
    kv = tn.matmul(tn.transpose(k, swap_last), v)
    num = tn.matmul(q, kv)
    k_sum = tn.sum_axis(k, -2, keepdims=True)
    den = tn.matmul(q, tn.transpose(k_sum, swap_last))
    out = tn.div(num, den)
    if p.heads > 1:
        out = tn.transpose(out, tuple(range(nl)) + (nl + 1, nl, nl + 2))
        out = tn.reshape(out, lead + (Tq, d))
    return tn.matmul(out, p.W_O)


def quadratic_attention(X, p: AttnParams) -> np.ndarray:
    """Reference O(T^2) evaluation of :func:`linear_attention` (no tape)."""
    x = X.data if isinstance(X, Tensor) else np.asarray(X)
    d = p.W_Q.shape[1]
    dh = d // p.heads
    phi = lambda z: np.where(z >= 0, z + 1.0, np.exp(np.minimum(z, 0.0)))  # noqa: E731
    q = phi(x @ p.W_Q.data)
    k = phi(x @ p.W_K.data)
    v = x @ p.W_V.data
    out = np.zeros_like(v)
    for lead in np.ndindex(*x.shape[:-2]):
        for h in range(p.heads):
            cols = slice(h * dh, (h + 1) * dh)
            w = q[lead][:, cols] @ k[lead][:, cols].T
            w = w / w.sum(axis=1, keepdims=True)
            out[lead][:, cols] = w @ v[lead][:, cols]
    return out @ p.W_O.data


def ffn(X: Tensor, p: FfnParams) -> Tensor:
    """Position-wise two-layer ReLU network with a residual connection."""
    if X.shape[-1] != p.W_1.shape[0] or p.W_1.shape[1] != p.W_2.shape[0]:
        raise tn.DimensionError(
            f"ffn shapes do not chain: x {X.shape}, W_1 {p.W_1.shape}, W_2 {p.W_2.shape}")
    h = tn.relu(tn.add(tn.matmul(X, p.W_1), p.b_1))
    return tn.add(X, tn.add(tn.matmul(h, p.W_2), p.b_2))


def cell_forward(cp: CellParams, X: Tensor, adj: AdjacencySet, max_order: int = 2,
                 last_step_only: bool = False) -> Tensor:
    """Apply one cell to ``(..., N, T, C)``.

    ``last_step_only`` returns just the final time step, ``(..., N, 1, C)``,
    skipping work whose result would be discarded; every operator other
    than attention is per-step, so the kept step is unchanged.
    """
    def S(t):
        return spatial_op(t, adj, cp.spatial, max_order=max_order)

    def T(t, last=False):
        return linear_attention(t, cp.temporal, last_query_only=last)

    def last(t):
        return tn.take_last_step(t, -2, keepdims=True) if last_step_only else t

    if cp.kind is CellKind.STP:
        if cp.W_m is None:
            raise tn.ContractError("STP cell needs a merge projection")
        mixed = tn.matmul(tn.concat_last(S(last(X)), T(X, last_step_only)), cp.W_m)
        return ffn(mixed, cp.ffn)
    if cp.kind is CellKind.STT:
        return ffn(T(S(X), last_step_only), cp.ffn)
    return ffn(S(T(X, last_step_only)), cp.ffn)
