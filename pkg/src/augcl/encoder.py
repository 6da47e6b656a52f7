"""GIN encoder, readout pooling and the 2-layer projection head.

The ``*_nodes`` builders record onto a :class:`ComputationGraph` for
training; :func:`gin_forward`, :func:`readout`, :func:`project` and
:func:`encode_views` are array-in/array-out conveniences built on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from augcl import numerics as nx
from augcl.graphs import GraphBatch
from augcl.numerics import ComputationGraph, Node


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int
    hidden: int = 32
    layers: int = 3
    proj_dim: int = 32
    readout: str = "sum"
    concat_layers: bool = False

    def __post_init__(self):
        if self.readout not in ("sum", "mean"):
            raise EncoderError(f"readout must be 'sum' or 'mean', got {self.readout!r}")
        if min(self.feature_dim, self.hidden, self.layers, self.proj_dim) < 1:
            raise EncoderError("encoder widths and depth must be positive")

    @property
    def embed_dim(self) -> int:
        return self.hidden * self.layers if self.concat_layers else self.hidden


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, config: EncoderConfig, seed) -> EncoderParams:
        rng = np.random.default_rng(seed)
        t: dict[str, np.ndarray] = {}
        width = config.feature_dim
        for layer in range(config.layers):
            t[f"gin.{layer}.eps"] = np.zeros(1)
            t[f"gin.{layer}.w1"] = glorot(rng, width, config.hidden)
            t[f"gin.{layer}.b1"] = np.zeros(config.hidden)
            t[f"gin.{layer}.w2"] = glorot(rng, config.hidden, config.hidden)
            t[f"gin.{layer}.b2"] = np.zeros(config.hidden)
            width = config.hidden
        t["proj.w1"] = glorot(rng, config.embed_dim, config.proj_dim)
        t["proj.b1"] = np.zeros(config.proj_dim)
        t["proj.w2"] = glorot(rng, config.proj_dim, config.proj_dim)
        t["proj.b2"] = np.zeros(config.proj_dim)
        return cls(config, t)

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], readout: str = "sum") -> EncoderParams:
        """Rebuild params from a checkpoint, inferring widths from tensor shapes."""
        try:
            layers = 1 + max(int(k.split(".")[1]) for k in tensors if k.startswith("gin."))
            feature_dim, hidden = tensors["gin.0.w1"].shape
            embed_dim, proj_dim = tensors["proj.w1"].shape
        except (KeyError, ValueError) as exc:
            raise EncoderError(f"checkpoint is not an encoder: {exc}") from None
        if embed_dim not in (hidden, hidden * layers):
            raise EncoderError(f"projection input width {embed_dim} fits neither readout layout")
        cfg = EncoderConfig(feature_dim, hidden, layers, proj_dim, readout, concat_layers=embed_dim != hidden)
        params = cls(cfg, {k: np.array(v, dtype=np.float64) for k, v in tensors.items()})
        params.validate()
        return params

    def validate(self) -> None:
        expected = EncoderParams.init(self.config, 0).tensors
        if set(expected) != set(self.tensors):
            raise EncoderError(f"parameter names differ: {sorted(set(expected) ^ set(self.tensors))}")
        for k, v in expected.items():
            if self.tensors[k].shape != v.shape:
                raise EncoderError(f"{k}: shape {self.tensors[k].shape}, expected {v.shape}")

    def copy(self) -> EncoderParams:
        return EncoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


# --- graph builders -------------------------------------------------------------


def bind(graph: ComputationGraph, params: EncoderParams) -> dict[str, Node]:
    return {k: graph.param(k, v) for k, v in params.tensors.items()}


def _linear(x: Node, w: Node, b: Node) -> Node:
    return nx.matmul(x, w) + b


def gin_nodes(graph: ComputationGraph, bound: dict[str, Node], batch: GraphBatch, cfg: EncoderConfig) -> list[Node]:
    """Per-layer node embeddings: ``h <- MLP((1 + eps) h + sum of neighbours)``."""
    if batch.features.shape[1] != cfg.feature_dim:
        raise EncoderError(f"batch feature width {batch.features.shape[1]} != encoder input {cfg.feature_dim}")
    h = graph.input("x", batch.features)
    src, dst = batch.message_index()
    n = batch.total_nodes
    one = graph.const(np.ones(1))
    outs = []
    for layer in range(cfg.layers):
        p = f"gin.{layer}."
        agg = nx.segment_sum(nx.gather_rows(h, src), dst, n)
        z = nx.mul(h, one + bound[p + "eps"]) + agg
        h = nx.relu(_linear(nx.relu(_linear(z, bound[p + "w1"], bound[p + "b1"])), bound[p + "w2"], bound[p + "b2"]))
        outs.append(h)
    return outs


def readout_nodes(
    graph: ComputationGraph, node_emb: Node, pooling_index: np.ndarray, n_graphs: int, mode: str = "sum"
) -> Node:
    pooled = nx.segment_sum(node_emb, pooling_index, n_graphs)
    if mode == "sum":
        return pooled
    if mode == "mean":
        counts = np.bincount(pooling_index, minlength=n_graphs).astype(np.float64)
        return nx.mul(pooled, graph.const((1.0 / np.maximum(counts, 1.0))[:, None]))
    raise EncoderError(f"unknown readout {mode!r}")


def embed_nodes(graph: ComputationGraph, bound: dict[str, Node], batch: GraphBatch, cfg: EncoderConfig) -> Node:
    """Pre-projection graph embeddings (the representation used downstream)."""
    layers = gin_nodes(graph, bound, batch, cfg)
    if cfg.concat_layers:
        pooled = [readout_nodes(graph, h, batch.pooling_index, batch.batch_size, cfg.readout) for h in layers]
        return nx.concat(pooled, axis=1)
    return readout_nodes(graph, layers[-1], batch.pooling_index, batch.batch_size, cfg.readout)


def project_nodes(g_emb: Node, bound: dict[str, Node]) -> Node:
    hidden = nx.relu(_linear(g_emb, bound["proj.w1"], bound["proj.b1"]))
    return _linear(hidden, bound["proj.w2"], bound["proj.b2"])


def encode_nodes(
    graph: ComputationGraph, bound: dict[str, Node], view1: GraphBatch, view2: GraphBatch, cfg: EncoderConfig
) -> tuple[Node, Node]:
    if view1.batch_size != view2.batch_size:
        raise EncoderError(f"view batch sizes differ: {view1.batch_size} vs {view2.batch_size}")
    z1 = project_nodes(embed_nodes(graph, bound, view1, cfg), bound)
    z2 = project_nodes(embed_nodes(graph, bound, view2, cfg), bound)
    return z1, z2


# --- array API ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmbeddingBatch:
    """Row ``i`` of both matrices comes from source graph ``i``."""

    z_tilde: np.ndarray
    z_hat: np.ndarray

    def __post_init__(self):
        if self.z_tilde.shape != self.z_hat.shape or self.z_tilde.ndim != 2:
            raise EncoderError(f"embedding shapes differ: {self.z_tilde.shape} vs {self.z_hat.shape}")
        if not (np.all(np.isfinite(self.z_tilde)) and np.all(np.isfinite(self.z_hat))):
            raise EncoderError("non-finite embeddings")

    @property
    def batch_size(self) -> int:
        return int(self.z_tilde.shape[0])


def gin_forward(batch: GraphBatch, params: EncoderParams, all_layers: bool = False):
    g = ComputationGraph()
    outs = gin_nodes(g, bind(g, params), batch, params.config)
    return [h.value for h in outs] if all_layers else outs[-1].value


def readout(node_embeddings: np.ndarray, pooling_index: np.ndarray, mode: str = "sum", n_graphs: int | None = None):
    pooling_index = np.asarray(pooling_index, dtype=np.int64)
    if pooling_index.shape[0] != node_embeddings.shape[0]:
        raise EncoderError("pooling index length does not match node count")
    n = int(pooling_index.max()) + 1 if n_graphs is None else n_graphs
    g = ComputationGraph()
    return readout_nodes(g, g.input("h", node_embeddings), pooling_index, n, mode).value


def project(graph_embeddings: np.ndarray, params: EncoderParams) -> np.ndarray:
    if graph_embeddings.shape[1] != params.config.embed_dim:
        raise EncoderError(f"embedding width {graph_embeddings.shape[1]} != head input {params.config.embed_dim}")
    g = ComputationGraph()
    return project_nodes(g.input("g", graph_embeddings), bind(g, params)).value


def embed(batch: GraphBatch, params: EncoderParams) -> np.ndarray:
    g = ComputationGraph()
    return embed_nodes(g, bind(g, params), batch, params.config).value


def encode_views(view1: GraphBatch, view2: GraphBatch, params: EncoderParams) -> EmbeddingBatch:
    g = ComputationGraph()
    z1, z2 = encode_nodes(g, bind(g, params), view1, view2, params.config)
    return EmbeddingBatch(z1.value, z2.value)
