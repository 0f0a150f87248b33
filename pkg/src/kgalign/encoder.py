"""Relation-aware heterogeneous graph transformer over typed edge lists.

The same stack runs twice per model: once over relation triples (edge
types are relations) and once over mined path triples (edge types are
paths), with independent parameters. Each layer:

  1. embeds every edge type from the mean of its distinct head entities
     (projected d -> d/2) concatenated with the mean of its distinct tail
     entities (projected d -> d/2), through ReLU;
  2. scores each edge per attention head as a^T((key(head) || query(tail))
     elementwise-modulated by that head's slice of the type embedding),
     scaled by 1/sqrt(d/heads), softmax-normalized over each head entity's
     outgoing edges;
  3. builds per-head messages value(tail) || type-slice, concatenated to 2d;
  4. aggregates attention-weighted messages per head entity and blends with
     the projected previous layer through a learned sigmoid gate.

Head slices partition the type embedding into ``heads`` equal chunks, so
key and query of head i share chunk i; with an even head count the first
half of the heads is modulated by head-entity features and the second
half by tail-entity features. Entities without outgoing edges keep the
gated projection of their previous embedding (all projections are
bias-free, so an empty neighborhood contributes exactly zero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import SegmentIndex, Tensor


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    dim: int = 300

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 2 != 0:
            raise ValueError(f"dim {self.dim} must be even")


@dataclass
class EdgeList:
    """Parallel (head, type, tail) arrays, sorted by head for segment ops.

    Also precomputes, per edge type, the distinct head and distinct tail
    entity lists used by the type-embedding means.
    """

    heads: np.ndarray
    types: np.ndarray
    tails: np.ndarray
    n_entities: int
    n_types: int

    head_seg: SegmentIndex = field(init=False, repr=False)
    type_seg: SegmentIndex = field(init=False, repr=False)
    head_rows: np.ndarray = field(init=False, repr=False)
    head_rows_seg: SegmentIndex = field(init=False, repr=False)
    head_rows_weight: np.ndarray = field(init=False, repr=False)
    tail_rows: np.ndarray = field(init=False, repr=False)
    tail_rows_seg: SegmentIndex = field(init=False, repr=False)
    tail_rows_weight: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        heads = np.asarray(self.heads, dtype=np.int64).ravel()
        types = np.asarray(self.types, dtype=np.int64).ravel()
        tails = np.asarray(self.tails, dtype=np.int64).ravel()
        if not (heads.size == types.size == tails.size):
            raise ValueError("heads, types and tails must have equal length")
        if heads.size:
            if heads.min() < 0 or heads.max() >= self.n_entities:
                raise ValueError("head entity id out of range")
            if tails.min() < 0 or tails.max() >= self.n_entities:
                raise ValueError("tail entity id out of range")
            if types.min() < 0 or types.max() >= self.n_types:
                raise ValueError("edge type id out of range")
        order = np.lexsort((tails, types, heads))
        self.heads = heads[order]
        self.types = types[order]
        self.tails = tails[order]
        self.head_seg = SegmentIndex(self.heads, self.n_entities)
        self.type_seg = SegmentIndex(self.types, self.n_types)
        covered = np.unique(self.types)
        if covered.size != self.n_types:
            missing = sorted(set(range(self.n_types)) - set(covered.tolist()))
            raise ValueError(f"edge types without any triple: {missing[:10]}")

        def distinct(entities: np.ndarray):
            pairs = np.unique(np.stack([self.types, entities], axis=1), axis=0)
            if pairs.size == 0:
                pairs = pairs.reshape(0, 2)
            seg_ids = pairs[:, 0]
            rows = pairs[:, 1]
            counts = np.bincount(seg_ids, minlength=self.n_types).astype(np.float64)
            counts[counts == 0.0] = 1.0
            weight = (1.0 / counts)[seg_ids].reshape(-1, 1)
            return rows, SegmentIndex(seg_ids, self.n_types), weight

        self.head_rows, self.head_rows_seg, self.head_rows_weight = distinct(self.heads)
        self.tail_rows, self.tail_rows_seg, self.tail_rows_weight = distinct(self.tails)

    @classmethod
    def from_triples(cls, triples, n_entities: int, n_types: int) -> "EdgeList":
        triples = sorted(triples)
        heads = np.array([h for h, _, _ in triples], dtype=np.int64)
        types = np.array([r for _, r, _ in triples], dtype=np.int64)
        tails = np.array([t for _, _, t in triples], dtype=np.int64)
        return cls(heads, types, tails, n_entities, n_types)

    @property
    def n_edges(self) -> int:
        return int(self.heads.size)


@dataclass
class RhgtLayerParams:
    """Trainable tensors of one layer (all projections bias-free)."""

    b_head: Tensor    # (d, d/2) type-embedding projection of head entities
    b_tail: Tensor    # (d, d/2) type-embedding projection of tail entities
    key: Tensor       # (d, d)   column block i is head i's key projection
    query: Tensor     # (d, d)
    value: Tensor     # (d, d)
    attn: list[Tensor]  # per head: (2d/heads, 1)
    agg: Tensor       # (2d, d)  projection of aggregated messages
    residual: Tensor  # (d, d)   projection of the previous layer
    gate: Tensor      # (1, 1)   logit of the residual gate

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.b_head": self.b_head,
            f"{prefix}.b_tail": self.b_tail,
            f"{prefix}.key": self.key,
            f"{prefix}.query": self.query,
            f"{prefix}.value": self.value,
            f"{prefix}.agg": self.agg,
            f"{prefix}.residual": self.residual,
            f"{prefix}.gate": self.gate,
        }
        for i, a in enumerate(self.attn):
            out[f"{prefix}.attn{i}"] = a
        return out


@dataclass
class RhgtParams:
    """One full stack: per-layer parameters plus its configuration."""

    layers: list[RhgtLayerParams]
    config: EncoderConfig

    def tensors(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for l, layer in enumerate(self.layers):
            name = f"{prefix}layer{l}" if prefix == "" else f"{prefix}.layer{l}"
            out.update(layer.tensors(name))
        return out

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors().items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors().items():
            if k not in values:
                raise KeyError(f"missing tensor {k!r} in checkpoint")
            if values[k].shape != t.data.shape:
                raise ValueError(
                    f"tensor {k!r}: checkpoint shape {values[k].shape} vs {t.data.shape}"
                )
            t.data = values[k].copy()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: EncoderConfig, rng: np.random.Generator) -> RhgtParams:
    d = config.dim
    dh = d // config.heads
    layers = []
    for _ in range(config.layers):
        layers.append(RhgtLayerParams(
            b_head=Tensor(_glorot(rng, d, d // 2), requires_grad=True),
            b_tail=Tensor(_glorot(rng, d, d // 2), requires_grad=True),
            key=Tensor(_glorot(rng, d, d), requires_grad=True),
            query=Tensor(_glorot(rng, d, d), requires_grad=True),
            value=Tensor(_glorot(rng, d, d), requires_grad=True),
            attn=[Tensor(_glorot(rng, 2 * dh, 1), requires_grad=True)
                  for _ in range(config.heads)],
            agg=Tensor(_glorot(rng, 2 * d, d), requires_grad=True),
            residual=Tensor(_glorot(rng, d, d), requires_grad=True),
            gate=Tensor(np.zeros((1, 1)), requires_grad=True),
        ))
    return RhgtParams(layers, config)


def relation_embedding(e_prev: Tensor, edges: EdgeList,
                       layer: RhgtLayerParams) -> Tensor:
    """Per-type embedding: ReLU(mean of projected distinct heads || mean of
    projected distinct tails), shape (n_types, d)."""
    proj_h = ad.matmul(e_prev, layer.b_head)
    proj_t = ad.matmul(e_prev, layer.b_tail)
    head_mean = ad.segment_sum(
        ad.gather_rows(proj_h, edges.head_rows),
        Tensor(edges.head_rows_weight),
        edges.head_rows_seg,
    )
    tail_mean = ad.segment_sum(
        ad.gather_rows(proj_t, edges.tail_rows),
        Tensor(edges.tail_rows_weight),
        edges.tail_rows_seg,
    )
    return ad.relu(ad.concat_cols(head_mean, tail_mean))


def _per_head_inputs(e_prev: Tensor, type_emb: Tensor, edges: EdgeList,
                     layer: RhgtLayerParams):
    key_rows = ad.gather_rows(ad.matmul(e_prev, layer.key), edges.heads)
    query_rows = ad.gather_rows(ad.matmul(e_prev, layer.query), edges.tails)
    type_rows = ad.gather_rows(type_emb, edges.types)
    return key_rows, query_rows, type_rows


def heterogeneous_attention(e_prev: Tensor, type_emb: Tensor, edges: EdgeList,
                            layer: RhgtLayerParams, heads: int) -> Tensor:
    """Per-edge attention weights, one column per head, each column
    softmax-normalized over the edges sharing a head entity."""
    d = e_prev.shape[1]
    dh = d // heads
    key_rows, query_rows, type_rows = _per_head_inputs(e_prev, type_emb, edges, layer)
    columns = []
    for i in range(heads):
        k_i = ad.slice_cols(key_rows, i * dh, (i + 1) * dh)
        q_i = ad.slice_cols(query_rows, i * dh, (i + 1) * dh)
        r_i = ad.slice_cols(type_rows, i * dh, (i + 1) * dh)
        modulated = ad.concat_cols(ad.mul(k_i, r_i), ad.mul(q_i, r_i))
        score = ad.scale(ad.matmul(modulated, layer.attn[i]), 1.0 / math.sqrt(dh))
        columns.append(ad.segment_softmax(score, edges.head_seg))
    return ad.concat_cols(*columns)


def heterogeneous_message(e_prev: Tensor, type_emb: Tensor, edges: EdgeList,
                          layer: RhgtLayerParams, heads: int) -> Tensor:
    """Per-edge messages: value(tail) || type slice per head, concatenated
    across heads to shape (edges, 2d)."""
    d = e_prev.shape[1]
    dh = d // heads
    value_rows = ad.gather_rows(ad.matmul(e_prev, layer.value), edges.tails)
    type_rows = ad.gather_rows(type_emb, edges.types)
    parts = []
    for i in range(heads):
        v_i = ad.slice_cols(value_rows, i * dh, (i + 1) * dh)
        r_i = ad.slice_cols(type_rows, i * dh, (i + 1) * dh)
        parts.append(ad.concat_cols(v_i, r_i))
    return ad.concat_cols(*parts)


def aggregate_and_residual(e_prev: Tensor, attn: Tensor, msgs: Tensor,
                           edges: EdgeList, layer: RhgtLayerParams,
                           heads: int) -> Tensor:
    """Attention-weighted per-head message sums blended with the projected
    previous layer through the sigmoid residual gate."""
    d = e_prev.shape[1]
    dh = d // heads
    aggregated = []
    for i in range(heads):
        w_i = ad.slice_cols(attn, i, i + 1)
        m_i = ad.slice_cols(msgs, 2 * dh * i, 2 * dh * (i + 1))
        aggregated.append(ad.segment_sum(m_i, w_i, edges.head_seg))
    update = ad.concat_cols(*aggregated)
    gate = ad.sigmoid(layer.gate)
    inv_gate = ad.shift(ad.scale(gate, -1.0), 1.0)
    return ad.add(
        ad.mul(gate, ad.matmul(update, layer.agg)),
        ad.mul(inv_gate, ad.matmul(e_prev, layer.residual)),
    )


def layer_forward(e_prev: Tensor, edges: EdgeList, layer: RhgtLayerParams,
                  heads: int) -> Tensor:
    if edges.n_edges == 0:
        gate = ad.sigmoid(layer.gate)
        inv_gate = ad.shift(ad.scale(gate, -1.0), 1.0)
        return ad.mul(inv_gate, ad.matmul(e_prev, layer.residual))
    type_emb = relation_embedding(e_prev, edges, layer)
    attn = heterogeneous_attention(e_prev, type_emb, edges, layer, heads)
    msgs = heterogeneous_message(e_prev, type_emb, edges, layer, heads)
    return aggregate_and_residual(e_prev, attn, msgs, edges, layer, heads)


def encode(names: np.ndarray | Tensor, edges: EdgeList,
           params: RhgtParams) -> Tensor:
    """Stack all layers over one edge structure, starting from the name
    embeddings. Returns the (n_entities, d) output of the last layer."""
    config = params.config
    e = names if isinstance(names, Tensor) else Tensor(names)
    if e.shape != (edges.n_entities, config.dim):
        raise ValueError(
            f"name embeddings must be ({edges.n_entities}, {config.dim}), got {e.shape}"
        )
    for layer in params.layers:
        e = layer_forward(e, edges, layer, config.heads)
    return e
