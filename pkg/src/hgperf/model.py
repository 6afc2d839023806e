"""Relation-wise message passing network for Performance-node regression.

Each layer computes, for every destination type ``t`` and every relation
``r`` that ends in ``t``::

    m_r(v) = mean_{u in N_r(v)} h_u @ W_neigh[r] + h_v @ W_self[r] + b[r]

then sums the relation outputs, applies GELU and dropout. Four layers are
stacked on the reverse-augmented graph and a linear head reads out one value
per Performance node.

Input representations: Problem nodes project their 46 ELA features; the
Performance type shares one learned vector across all its nodes; the other
types learn one vector per node.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .hetgraph import N_ELA_FEATURES, FORWARD_RELATIONS, HeteroGraph, NodeType, Relation

N_LAYERS = 4
CHECKPOINT_VERSION = 1

EMBEDDING_GRID = (32, 64, 128)
DROPOUT_GRID = (0.1, 0.2, 0.3)


@dataclass(frozen=True, order=True)
class Hyperparams:
    embedding_size: int = 64
    dropout: float = 0.2
    final_activation: bool = True

    def __post_init__(self):
        if self.embedding_size < 1:
            raise ConfigError(f"embedding_size must be positive, got {self.embedding_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def label(self) -> str:
        text = f"emb={self.embedding_size};dropout={self.dropout:g}"
        return text if self.final_activation else text + ";final_activation=0"


def default_grid() -> list[Hyperparams]:
    return [Hyperparams(e, d) for e in EMBEDDING_GRID for d in DROPOUT_GRID]


@dataclass
class RelationLayerParams:
    w_self: Tensor
    w_neigh: Tensor
    bias: Tensor


@dataclass
class ModelParams:
    embeddings: dict  # NodeType -> Tensor; Performance has a single row
    proj_w: Tensor
    proj_b: Tensor
    layers: list  # one dict Relation -> RelationLayerParams per layer
    head_w: Tensor
    head_b: Tensor
    hp: Hyperparams = field(default_factory=Hyperparams)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"embedding/{t.value}", self.embeddings[t]) for t in NodeType if t in self.embeddings]
        out += [("projection/weight", self.proj_w), ("projection/bias", self.proj_b)]
        for i, layer in enumerate(self.layers):
            for r, p in layer.items():
                for role in ("w_self", "w_neigh", "bias"):
                    out.append((f"layer{i}/{r.name}/{role}", getattr(p, role)))
        out += [("head/weight", self.head_w), ("head/bias", self.head_b)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def snapshot(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def restore(self, values: dict):
        for name, t in self.named_parameters():
            t.data = values[name]


def _require_reverse(g: HeteroGraph):
    missing = [r.reversed().name for r in FORWARD_RELATIONS if r in g.edges and r.reversed() not in g.edges]
    if missing:
        raise ConfigError(f"graph lacks reverse relations {missing}; call add_reverse_relations first")


def init_model(g: HeteroGraph, hp: Hyperparams, rng: np.random.Generator) -> ModelParams:
    """Kaiming-uniform initialisation (fan_in = input width); biases start at zero."""
    _require_reverse(g)
    d = hp.embedding_size

    embeddings = {}
    for t in NodeType:
        if t is NodeType.PROBLEM:
            continue
        rows = 1 if t is NodeType.PERFORMANCE else g.num_nodes(t)
        embeddings[t] = ad.kaiming_uniform(rows, d, d, rng, name=f"embedding/{t.value}")

    proj_w = ad.kaiming_uniform(N_ELA_FEATURES, d, N_ELA_FEATURES, rng, name="projection/weight")
    proj_b = Tensor(np.zeros((1, d)), requires_grad=True, name="projection/bias")

    layers = []
    for i in range(N_LAYERS):
        layer = {}
        for r in g.edges:
            layer[r] = RelationLayerParams(
                w_self=ad.kaiming_uniform(d, d, d, rng, name=f"layer{i}/{r.name}/w_self"),
                w_neigh=ad.kaiming_uniform(d, d, d, rng, name=f"layer{i}/{r.name}/w_neigh"),
                bias=Tensor(np.zeros((1, d)), requires_grad=True, name=f"layer{i}/{r.name}/bias"),
            )
        layers.append(layer)

    head_w = ad.kaiming_uniform(d, 1, d, rng, name="head/weight")
    head_b = Tensor(np.zeros((1, 1)), requires_grad=True, name="head/bias")
    return ModelParams(embeddings, proj_w, proj_b, layers, head_w, head_b, hp)


def input_features(g: HeteroGraph, params: ModelParams) -> dict:
    h = {}
    for t in NodeType:
        if t is NodeType.PROBLEM:
            x = Tensor(g.features.get(t, np.zeros((0, N_ELA_FEATURES))))
            if x.shape[1] != params.proj_w.shape[0]:
                raise ShapeError(f"Problem features have {x.shape[1]} columns, projection expects {params.proj_w.shape[0]}")
            h[t] = x @ params.proj_w + params.proj_b
        elif t is NodeType.PERFORMANCE:
            h[t] = ad.broadcast_rows(params.embeddings[t], g.num_nodes(t))
        else:
            emb = params.embeddings[t]
            if emb.shape[0] != g.num_nodes(t):
                raise ShapeError(f"{t} embedding has {emb.shape[0]} rows for {g.num_nodes(t)} nodes")
            h[t] = emb
    return h


def layer_forward(
    g: HeteroGraph,
    params: dict,
    h: dict,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    activation: bool = True,
) -> dict:
    """One round of relation-wise mean aggregation and cross-relation summation."""
    incoming = {}
    for r in g.edges:
        if r in params:
            incoming.setdefault(r.dst, []).append(r)
    segs = g.segment_maps

    out = {}
    for t, h_t in h.items():
        rels = incoming.get(t)
        if not rels:
            out[t] = h_t
            continue
        acc = None
        for r in rels:
            p = params[r]
            if h[r.src].shape[1] != p.w_neigh.shape[0] or h_t.shape[1] != p.w_self.shape[0]:
                raise ShapeError(f"width mismatch on relation {r.name!r}")
            msg = ad.segment_mean(h[r.src], segs[r]) @ p.w_neigh + h_t @ p.w_self + p.bias
            acc = msg if acc is None else acc + msg
        if activation:
            acc = ad.gelu(acc)
        out[t] = ad.dropout(acc, dropout, training, rng)
    return out


def model_forward(
    g: HeteroGraph,
    params: ModelParams,
    hp: Hyperparams | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Predictions for every Performance node as an (n, 1) tensor."""
    hp = hp or params.hp
    h = input_features(g, params)
    for i, layer in enumerate(params.layers):
        last = i == len(params.layers) - 1
        h = layer_forward(
            g, layer, h, hp.dropout, training, rng, activation=hp.final_activation or not last
        )
    return h[NodeType.PERFORMANCE] @ params.head_w + params.head_b


def predict(g: HeteroGraph, params: ModelParams) -> np.ndarray:
    return model_forward(g, params, training=False).data[:, 0].copy()


def receptive_field(g: HeteroGraph, node: tuple, k: int) -> set:
    """Nodes within ``k`` hops of ``node`` = (NodeType, index), ignoring edge direction."""
    if k < 0:
        raise ValueError("k must be non-negative")
    adj = {}
    for r, e in g.edges.items():
        for a, b in e.tolist():
            adj.setdefault((r.src, a), set()).add((r.dst, b))
            adj.setdefault((r.dst, b), set()).add((r.src, a))
    start = (NodeType(node[0]), int(node[1]))
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        v, depth = frontier.popleft()
        if depth == k:
            continue
        for u in adj.get(v, ()):
            if u not in seen:
                seen.add(u)
                frontier.append((u, depth + 1))
    return seen


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path, transform=None) -> None:
    """Store every parameter tensor (keyed by layer/relation/role) plus metadata in an .npz file."""
    arrays = {name: t.data for name, t in params.named_parameters()}
    relations = [[r.name, r.src.value, r.dst.value] for r in params.layers[0]] if params.layers else []
    meta = {
        "version": CHECKPOINT_VERSION,
        "hyperparams": {
            "embedding_size": params.hp.embedding_size,
            "dropout": params.hp.dropout,
            "final_activation": params.hp.final_activation,
        },
        "relations": relations,
        "n_layers": len(params.layers),
        "target_transform": None if transform is None else {"kind": transform.kind, "floor": transform.floor},
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}

    def tensor(name):
        return Tensor(arrays[name], requires_grad=True, name=name)

    hp = Hyperparams(**meta["hyperparams"])
    relations = [Relation(n, NodeType(s), NodeType(d)) for n, s, d in meta["relations"]]
    embeddings = {
        t: tensor(f"embedding/{t.value}") for t in NodeType if f"embedding/{t.value}" in arrays
    }
    layers = [
        {
            r: RelationLayerParams(
                tensor(f"layer{i}/{r.name}/w_self"),
                tensor(f"layer{i}/{r.name}/w_neigh"),
                tensor(f"layer{i}/{r.name}/bias"),
            )
            for r in relations
        }
        for i in range(meta["n_layers"])
    ]
    params = ModelParams(
        embeddings,
        tensor("projection/weight"),
        tensor("projection/bias"),
        layers,
        tensor("head/weight"),
        tensor("head/bias"),
        hp,
    )
    return params, meta
