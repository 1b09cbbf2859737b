"""Graph edge attention network and the flat-feature MLP baseline.

Every directed edge (i, j) encodes its node-edge-node triplet through five
affine maps: a feature and a raw attention score routed back to the source
node, a feature and score routed to the target node, and the next-layer
edge representation. Each node then normalizes the scores of all its
incoming contributions (from edges where it is source or target) with one
softmax and aggregates the matching features. Routing source- and
target-bound messages separately is what preserves edge direction, and the
per-layer edge update is what distinguishes this from a static-edge
attention network; both can be switched off for ablations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError
from .graphrep import (
    EDGE_FLOWS,
    MAX_EDGE_POSITION,
    ProgramGraph,
    Vocabulary,
    block_relpos,
    clamp_edge_position,
)

__all__ = [
    "GeanConfig",
    "EncodedGraph",
    "encode_graph",
    "init_params",
    "init_mlp_params",
    "wrap_params",
    "embed_nodes",
    "embed_edges",
    "gean_layer",
    "forward",
    "predict",
    "mlp_forward",
    "mlp_predict",
    "save_config",
    "load_config",
]

_FLOW_INDEX = {flow: i for i, flow in enumerate(EDGE_FLOWS)}


@dataclass(frozen=True)
class GeanConfig:
    """Architecture knobs; defaults follow the desk-scale setup."""

    vocab_size: int
    output_dim: int
    embed_dim: int = 64
    num_layers: int = 4
    hidden_dim: int = 128
    head: str = "nvp"  # nvp | bc | qvalue
    update_edges: bool = True

    def validate(self) -> "GeanConfig":
        if self.embed_dim < 1 or self.num_layers < 1 or self.output_dim < 1:
            raise ConfigError("embed_dim, num_layers and output_dim must be >= 1")
        if self.head not in ("nvp", "bc", "qvalue"):
            raise ConfigError(f"unknown head kind: {self.head!r}")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GeanConfig":
        return cls(**json.loads(text)).validate()


@dataclass(frozen=True)
class EncodedGraph:
    """Integer arrays extracted once per graph before any forward pass."""

    token_ids: np.ndarray
    flow_ids: np.ndarray
    positions: np.ndarray
    relpos_ids: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    n_nodes: int
    touched: np.ndarray = field(repr=False)  # (n, 1) 1.0 where node has edges


def encode_graph(g: ProgramGraph, vocab: Vocabulary) -> EncodedGraph:
    n = len(g.nodes)
    token_ids = vocab.encode_graph(g)
    m = len(g.edges)
    flow_ids = np.empty(m, dtype=np.int64)
    positions = np.empty(m, dtype=np.int64)
    relpos_ids = np.empty(m, dtype=np.int64)
    src = np.empty(m, dtype=np.int64)
    dst = np.empty(m, dtype=np.int64)
    for k, e in enumerate(g.edges):
        flow_ids[k] = _FLOW_INDEX[e.flow]
        positions[k] = clamp_edge_position(e.position)
        relpos_ids[k] = block_relpos(e, g.nodes) + 1
        src[k] = e.src
        dst[k] = e.dst
    touched = np.zeros((n, 1), dtype=np.float64)
    touched[src] = 1.0
    touched[dst] = 1.0
    return EncodedGraph(token_ids, flow_ids, positions, relpos_ids, src, dst, n, touched)


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: GeanConfig, seed: int = 0) -> dict[str, np.ndarray]:
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = cfg.embed_dim
    params: dict[str, np.ndarray] = {
        "node_embedding": _uniform(rng, d, (cfg.vocab_size, d)),
        "edge_type_embedding": _uniform(rng, d, (len(EDGE_FLOWS), d)),
        "edge_position_embedding": _uniform(rng, d, (MAX_EDGE_POSITION + 1, d)),
        "edge_block_embedding": _uniform(rng, d, (3, d)),
    }
    for layer in range(cfg.num_layers):
        for name, out_dim in (("m1", d), ("m2", 1), ("m3", d), ("m4", 1), ("m5", d)):
            params[f"layer{layer}.{name}.weight"] = _uniform(rng, 3 * d, (3 * d, out_dim))
            params[f"layer{layer}.{name}.bias"] = np.zeros((1, out_dim))
    params["head.fc1.weight"] = _uniform(rng, d, (d, cfg.hidden_dim))
    params["head.fc1.bias"] = np.zeros((1, cfg.hidden_dim))
    params["head.fc2.weight"] = _uniform(rng, cfg.hidden_dim, (cfg.hidden_dim, cfg.output_dim))
    params["head.fc2.bias"] = np.zeros((1, cfg.output_dim))
    return params


def init_mlp_params(in_dim: int, hidden_dim: int, output_dim: int,
                    seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {
        "mlp.fc1.weight": _uniform(rng, in_dim, (in_dim, hidden_dim)),
        "mlp.fc1.bias": np.zeros((1, hidden_dim)),
        "mlp.fc2.weight": _uniform(rng, hidden_dim, (hidden_dim, hidden_dim)),
        "mlp.fc2.bias": np.zeros((1, hidden_dim)),
        "mlp.fc3.weight": _uniform(rng, hidden_dim, (hidden_dim, output_dim)),
        "mlp.fc3.bias": np.zeros((1, output_dim)),
    }


def wrap_params(params: dict[str, np.ndarray]) -> dict[str, T.Tensor]:
    """Fresh leaf tensors for one forward/backward pass."""
    return {name: T.Tensor(arr, requires_grad=True) for name, arr in params.items()}


def embed_nodes(enc: EncodedGraph, params: dict[str, T.Tensor]) -> T.Tensor:
    table = params["node_embedding"]
    if enc.token_ids.size and enc.token_ids.max() >= table.data.shape[0]:
        raise InputError("token id out of vocabulary range")
    return T.gather_rows(table, enc.token_ids)


def embed_edges(enc: EncodedGraph, params: dict[str, T.Tensor]) -> T.Tensor:
    """Sum of edge-type, clamped-position and block-relpos embeddings."""
    type_part = T.gather_rows(params["edge_type_embedding"], enc.flow_ids)
    pos_part = T.gather_rows(params["edge_position_embedding"], enc.positions)
    block_part = T.gather_rows(params["edge_block_embedding"], enc.relpos_ids)
    return T.add(T.add(type_part, pos_part), block_part)


def _affine(h: T.Tensor, params, prefix: str) -> T.Tensor:
    return T.add(T.matmul(h, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def gean_layer(x: T.Tensor, e: T.Tensor, enc: EncodedGraph,
               params: dict[str, T.Tensor], layer: int,
               update_edges: bool = True) -> tuple[T.Tensor, T.Tensor]:
    if enc.src.size == 0:
        return x, e  # nothing to aggregate; all nodes keep their features
    prefix = f"layer{layer}"
    h = T.concat([T.gather_rows(x, enc.src), e, T.gather_rows(x, enc.dst)], axis=1)
    to_src = _affine(h, params, f"{prefix}.m1")
    score_src = T.reshape(_affine(h, params, f"{prefix}.m2"), (-1,))
    to_dst = _affine(h, params, f"{prefix}.m3")
    score_dst = T.reshape(_affine(h, params, f"{prefix}.m4"), (-1,))

    # one joint softmax per node over all of its contributions
    feats = T.concat([to_src, to_dst], axis=0)
    scores = T.concat([score_src, score_dst], axis=0)
    receivers = np.concatenate([enc.src, enc.dst])
    alpha = T.segment_softmax(scores, receivers)
    agg = T.segment_sum(T.scale_rows(feats, alpha), receivers, enc.n_nodes)
    activated = T.elu(agg)
    # isolated nodes pass their previous representation through unchanged
    x_next = T.add(T.mul_const(activated, enc.touched),
                   T.mul_const(x, 1.0 - enc.touched))
    e_next = _affine(h, params, f"{prefix}.m5") if update_edges else e
    return x_next, e_next


def forward(enc: EncodedGraph, params: dict[str, T.Tensor],
            cfg: GeanConfig) -> T.Tensor:
    """Full model: embeddings, attention layers, mean pooling, head MLP.

    Returns a (1, K) tensor: logits for the nvp/bc heads (the softmax lives
    in the loss and in inference), raw values for the qvalue head.
    """
    x = embed_nodes(enc, params)
    e = embed_edges(enc, params)
    for layer in range(cfg.num_layers):
        x, e = gean_layer(x, e, enc, params, layer, cfg.update_edges)
    pooled = T.mean_rows(x)
    hidden = T.elu(_affine(pooled, params, "head.fc1"))
    return _affine(hidden, params, "head.fc2")


def predict(enc: EncodedGraph, params: dict[str, np.ndarray],
            cfg: GeanConfig) -> np.ndarray:
    out = forward(enc, {k: T.Tensor(v) for k, v in params.items()}, cfg)
    return out.data.reshape(-1).copy()


def mlp_forward(features, params: dict[str, T.Tensor]) -> T.Tensor:
    """Two-hidden-layer MLP over the fixed-size integer feature vector."""
    x = T.Tensor(np.asarray(features, dtype=np.float64).reshape(1, -1))
    h1 = T.elu(_affine(x, params, "mlp.fc1"))
    h2 = T.elu(_affine(h1, params, "mlp.fc2"))
    return _affine(h2, params, "mlp.fc3")


def mlp_predict(features, params: dict[str, np.ndarray]) -> np.ndarray:
    out = mlp_forward(features, {k: T.Tensor(v) for k, v in params.items()})
    return out.data.reshape(-1).copy()


def save_config(cfg: GeanConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_json() + "\n")


def load_config(path: str | Path) -> GeanConfig:
    return GeanConfig.from_json(Path(path).read_text())
