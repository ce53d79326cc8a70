"""Search space: six-edge DAG of cells, model construction and forward pass."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .st_ops import (
    CELL_KINDS,
    AdjacencySet,
    AttnParams,
    CellKind,
    CellParams,
    ConfigError,
    FfnParams,
    InputError,
    SpatialParams,
    cell_forward,
)
from .tensor import ParamStore, Tensor

NUM_LAYERS = 6
NUM_NODES_DAG = 4
LAYER_KEYS = tuple(f"Layer_{i}" for i in range(1, NUM_LAYERS + 1))

_BY_NAME = {k.value: k for k in CELL_KINDS}
_BY_NAME["spatial-temporal-parallely"] = CellKind.STP
_BY_CODE = {k.name: k for k in CELL_KINDS}


class SpecError(ValueError):
    """An architecture description is malformed."""


def kind_from_name(name: str) -> CellKind:
    """Map a prompt-facing module name (or its short code) to a CellKind."""
    if isinstance(name, CellKind):
        return name
    if not isinstance(name, str):
        raise SpecError(f"module name must be a string, got {name!r}")
    key = name.strip()
    if key.upper() in _BY_CODE:
        return _BY_CODE[key.upper()]
    key = key.lower()
    if key not in _BY_NAME:
        raise SpecError(f"unknown module name {name!r}")
    return _BY_NAME[key]


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple

    def __post_init__(self):
        layers = tuple(kind_from_name(k) for k in self.layers)
        if len(layers) != NUM_LAYERS:
            raise SpecError(f"an architecture has exactly {NUM_LAYERS} layers, got {len(layers)}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_codes(cls, codes) -> "ArchSpec":
        if isinstance(codes, str):
            codes = [c for c in codes.replace(",", " ").split() if c]
        return cls(tuple(codes))

    @property
    def codes(self) -> tuple:
        return tuple(k.name for k in self.layers)

    def to_dict(self) -> dict:
        return {key: kind.value for key, kind in zip(LAYER_KEYS, self.layers)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "ArchSpec":
        if not isinstance(obj, dict):
            raise SpecError("architecture must be a JSON object")
        layers = []
        for key in LAYER_KEYS:
            if key not in obj:
                raise SpecError(f"missing {key}")
            try:
                layers.append(kind_from_name(obj[key]))
            except SpecError as exc:
                raise SpecError(f"{key}: {exc}") from None
        return cls(tuple(layers))

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        return cls.from_dict(json.loads(text))

    def __str__(self) -> str:
        return "-".join(self.codes)


@dataclass(frozen=True)
class DagTopology:
    node_count: int
    edges: tuple

    def incoming(self, node: int) -> list:
        return [i for i, (_, dst) in enumerate(self.edges) if dst == node]


def canonical_topology() -> DagTopology:
    """Every earlier node feeds every later node; edges in (src, dst) order."""
    edges = tuple((u, v) for u in range(1, NUM_NODES_DAG + 1)
                  for v in range(u + 1, NUM_NODES_DAG + 1))
    return DagTopology(node_count=NUM_NODES_DAG, edges=edges)


def enumerate_space() -> list:
    return [ArchSpec(combo) for combo in itertools.product(CELL_KINDS, repeat=NUM_LAYERS)]


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int = 8
    hidden_size: int = 16
    attn_dim: int = 16
    attn_heads: int = 2
    ffn_dim: int = 32
    graph_order: int = 2
    max_graph_order: int = 2
    node_embed_dim: int = 8
    dropout: float = 0.1
    input_dim: int = 1
    horizon: int = 12
    history: int = 12
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("num_nodes", "hidden_size", "attn_dim", "attn_heads", "ffn_dim",
                     "node_embed_dim", "input_dim", "horizon", "history"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.attn_dim % self.attn_heads:
            raise ConfigError("attn_dim must be divisible by attn_heads")
        if not 0 <= self.graph_order <= self.max_graph_order:
            raise ConfigError(
                f"graph_order {self.graph_order} outside [0, {self.max_graph_order}]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")


@dataclass
class ModelInstance:
    spec: ArchSpec
    cfg: ModelConfig
    seed: int
    params: ParamStore
    embed_W: Tensor
    embed_b: Tensor
    edge_params: list
    head_W: Tensor
    head_b: Tensor
    topology: DagTopology = field(default_factory=canonical_topology)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out)).astype(dtype)


def init_model(spec: ArchSpec, cfg: ModelConfig, seed: int) -> ModelInstance:
    """Build a model with Xavier-uniform weights and zero biases."""
    if not isinstance(spec, ArchSpec):
        raise SpecError("init_model needs an ArchSpec")
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype).type
    store = ParamStore()
    C = cfg.hidden_size

    def mat(name, fan_in, fan_out):
        return store.add(name, _xavier(rng, fan_in, fan_out, dtype))

    def bias(name, n):
        return store.add(name, np.zeros(n, dtype=dtype))

    embed_W = mat("embed.W", cfg.input_dim, C)
    embed_b = bias("embed.b", C)
    edges = []
    for i, kind in enumerate(spec.layers, start=1):
        pre = f"edge{i}"
        spatial = SpatialParams(
            W_g=mat(f"{pre}.W_g", C, C),
            W_f=mat(f"{pre}.W_f", C, C),
            W_b=mat(f"{pre}.W_b", C, C),
            W_adp=mat(f"{pre}.W_adp", C, C),
            E_1=mat(f"{pre}.E_1", cfg.num_nodes, cfg.node_embed_dim),
            E_2=mat(f"{pre}.E_2", cfg.num_nodes, cfg.node_embed_dim),
            order=cfg.graph_order,
        )
        temporal = AttnParams(
            W_Q=mat(f"{pre}.W_Q", C, cfg.attn_dim),
            W_K=mat(f"{pre}.W_K", C, cfg.attn_dim),
            W_V=mat(f"{pre}.W_V", C, cfg.attn_dim),
            W_O=mat(f"{pre}.W_O", cfg.attn_dim, C),
            heads=cfg.attn_heads,
        )
        ff = FfnParams(
            W_1=mat(f"{pre}.W_1", C, cfg.ffn_dim),
            b_1=bias(f"{pre}.b_1", cfg.ffn_dim),
            W_2=mat(f"{pre}.W_2", cfg.ffn_dim, C),
            b_2=bias(f"{pre}.b_2", C),
        )
        W_m = mat(f"{pre}.W_m", 2 * C, C) if kind is CellKind.STP else None
        edges.append(CellParams(kind=kind, spatial=spatial, temporal=temporal, ffn=ff, W_m=W_m))
    head_W = mat("head.W", C, cfg.horizon)
    head_b = bias("head.b", cfg.horizon)
    return ModelInstance(spec=spec, cfg=cfg, seed=seed, params=store, embed_W=embed_W,
                         embed_b=embed_b, edge_params=edges, head_W=head_W, head_b=head_b)


def _dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / keep
    return tn.mul(x, Tensor(mask, dtype=x.data.dtype))


def forward(m: ModelInstance, X_hist, adj: AdjacencySet, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Run the DAG on ``(S, N, C_raw)`` or ``(B, S, N, C_raw)`` input.

    Returns predictions shaped ``(P, N)`` (or ``(B, P, N)``).
    """
    cfg = m.cfg
    x = X_hist if isinstance(X_hist, Tensor) else Tensor(X_hist, dtype=np.dtype(cfg.dtype).type)
    if x.ndim not in (3, 4) or x.shape[-3:] != (cfg.history, cfg.num_nodes, cfg.input_dim):
        raise InputError(
            f"expected input (.., {cfg.history}, {cfg.num_nodes}, {cfg.input_dim}), got {x.shape}")
    if adj.n != cfg.num_nodes:
        raise InputError(f"graph has {adj.n} nodes, model expects {cfg.num_nodes}")
    use_dropout = training and cfg.dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("training with dropout needs an rng")

    topo = m.topology
    nd = x.ndim
    # (.., S, N, C_raw) -> node-major (.., N, S, C_raw)
    x = tn.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    states = {1: tn.add(tn.matmul(x, m.embed_W), m.embed_b)}
    for node in range(2, topo.node_count + 1):
        acc = None
        for e in topo.incoming(node):
            src = topo.edges[e][0]
            # the head reads only the last step of the output node
            y = cell_forward(m.edge_params[e], states[src], adj, max_order=cfg.max_graph_order,
                             last_step_only=node == topo.node_count)
            if use_dropout:
                y = _dropout(y, cfg.dropout, rng)
            acc = y if acc is None else tn.add(acc, y)
        states[node] = acc
    last = tn.take_last_step(states[topo.node_count], axis=-2)
    pred = tn.add(tn.matmul(last, m.head_W), m.head_b)
    axes = tuple(range(pred.ndim - 2)) + (pred.ndim - 1, pred.ndim - 2)
    return tn.transpose(pred, axes)
