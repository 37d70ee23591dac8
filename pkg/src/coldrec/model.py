"""Model architecture: field encoders with attention fusion, graph
convolution over the interaction graph, dot-product scoring, and the
contrastive + cross-entropy training objective."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .data import (BipartiteGraph, FeatureSchema, FieldedFeatures, SideFeatures,
                   collect_features)


@dataclass
class ModelConfig:
    embed_dim: int = 64
    gcn_layers: int = 2
    temperature: float = 0.2
    cl_weight: float = 0.5
    # ablation switches
    adaptive_selection: bool = True
    multimodal_fusion: bool = True
    contrastive: bool = True
    gcn: bool = True
    # the printed contrastive denominator sums only negatives; the standard
    # form includes the positive term and is the default here
    nce_positive_in_denominator: bool = True

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.cl_weight < 0:
            raise ValueError("cl_weight must be >= 0")

    @property
    def uses_contrastive(self) -> bool:
        return self.contrastive and self.cl_weight > 0

    def ablated(self, **flags) -> "ModelConfig":
        return replace(self, **flags)

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "gcn_layers": self.gcn_layers,
            "temperature": self.temperature,
            "cl_weight": self.cl_weight,
            "adaptive_selection": self.adaptive_selection,
            "multimodal_fusion": self.multimodal_fusion,
            "contrastive": self.contrastive,
            "gcn": self.gcn,
            "nce_positive_in_denominator": self.nce_positive_in_denominator,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass(frozen=True)
class EntityEmbedding:
    vector: np.ndarray
    stage: str  # "fused" or "propagated"


class ModelParams:
    """All learnable tensors, addressable by name through a ParamSet."""

    def __init__(self, params: ad.ParamSet, user_schema: FeatureSchema,
                 item_schema: FeatureSchema, config: ModelConfig):
        self.params = params
        self.user_schema = user_schema
        self.item_schema = item_schema
        self.config = config

    @staticmethod
    def init(user_schema: FeatureSchema, item_schema: FeatureSchema,
             config: ModelConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d = config.embed_dim
        ps = ad.ParamSet()
        bound = 1.0 / np.sqrt(d)
        for schema in (user_schema, item_schema):
            for spec in schema.fields:
                ps.add(f"{schema.side}.{spec.name}",
                       rng.uniform(-bound, bound, size=(spec.vocab_size, d)))
        fan = np.sqrt(6.0 / (2 * d))
        ps.add("attn.W", rng.uniform(-fan, fan, size=(d, d)))
        ps.add("attn.v", np.zeros((d, 1)))
        for layer in range(config.gcn_layers):
            ps.add(f"gcn.W{layer}", rng.uniform(-fan, fan, size=(d, d)))
        return ModelParams(ps, user_schema, item_schema, config)

    def table(self, side: str, fname: str) -> ad.Parameter:
        return self.params[f"{side}.{fname}"]

    def gcn_weight(self, layer: int) -> ad.Parameter:
        return self.params[f"gcn.W{layer}"]

    @property
    def attn_w(self) -> ad.Parameter:
        return self.params["attn.W"]

    @property
    def attn_v(self) -> ad.Parameter:
        return self.params["attn.v"]


def attention_fuse(field_embs: list[ad.Node], w_attn: ad.Node,
                   v_attn: ad.Node) -> tuple[ad.Node, ad.Node]:
    """Softmax-weighted combination of per-field embedding rows.

    Each field contributes an (n, d) block; its per-row logit is
    v . tanh(W e). Returns the fused (n, d) block and the (n, F) weights.
    """
    if not field_embs:
        raise ValueError("attention_fuse needs at least one field")
    logits = [ad.matmul(ad.tanh(ad.matmul(e, w_attn)), v_attn) for e in field_embs]
    weights = ad.softmax_rows(ad.concat_cols(logits))
    fused = None
    for j, e in enumerate(field_embs):
        term = ad.mul(ad.slice_cols(weights, j, j + 1), e)
        fused = term if fused is None else ad.add(fused, term)
    return fused, weights


def field_embeddings(feats: SideFeatures, params: ModelParams) -> dict[str, ad.Node]:
    """Look up one (n, d) embedding block per schema field.

    Single-valued fields gather table rows; multi-valued fields average
    member rows through their precomputed pooling matrix.
    """
    side = feats.schema.side
    out = {}
    for spec in feats.schema.fields:
        table = params.table(side, spec.name)
        if spec.multi_valued:
            out[spec.name] = ad.sparse_matmul(feats.pooled[spec.name], table)
        else:
            out[spec.name] = ad.embedding_rows(table, feats.single[spec.name])
    return out


def encode_all(feats: SideFeatures, params: ModelParams,
               config: ModelConfig) -> ad.Node:
    """Fused embeddings for every entity of one side, dense-id order."""
    id_field = feats.schema.fields[-1].name
    embs = field_embeddings(feats, params)
    if not config.multimodal_fusion:
        return embs[id_field]
    blocks = [embs[spec.name] for spec in feats.schema.fields]
    if not config.adaptive_selection:
        acc = blocks[0]
        for b in blocks[1:]:
            acc = ad.add(acc, b)
        return ad.scale(acc, 1.0 / len(blocks))
    fused, _ = attention_fuse(blocks, params.attn_w, params.attn_v)
    return fused


def encode_node(fielded: FieldedFeatures, schema: FeatureSchema,
                params: ModelParams, config: ModelConfig) -> ad.Node:
    """Fused embedding of a single entity as a differentiable (1, d) node."""
    return encode_all(collect_features([fielded], schema), params, config)


def encode(fielded: FieldedFeatures, schema: FeatureSchema,
           params: ModelParams, config: ModelConfig) -> EntityEmbedding:
    return EntityEmbedding(encode_node(fielded, schema, params, config).value[0].copy(),
                           "fused")


def gcn_forward(graph: BipartiteGraph, h0: ad.Node, params: ModelParams,
                n_layers: int) -> ad.Node:
    """Stacked graph convolutions; the last layer stays linear so output
    embeddings are not forced non-negative."""
    if h0.shape[0] != graph.n_nodes:
        raise ad.ShapeError(
            f"expected {graph.n_nodes} rows of node features, got {h0.shape[0]}")
    h = h0
    for layer in range(n_layers):
        h = ad.matmul(ad.sparse_matmul(graph.adjacency, h), params.gcn_weight(layer))
        if layer < n_layers - 1:
            h = ad.relu(h)
    return h


def propagate(graph: BipartiteGraph, h0: ad.Node, params: ModelParams,
              config: ModelConfig) -> ad.Node:
    if not config.gcn:
        return h0
    return gcn_forward(graph, h0, params, config.gcn_layers)


def forward_node_embeddings(user_feats: SideFeatures, item_feats: SideFeatures,
                            graph: BipartiteGraph, params: ModelParams,
                            config: ModelConfig) -> ad.Node:
    """Full forward pass: fused features for all nodes, then propagation.

    Rows 0..n_users-1 are users, the rest items.
    """
    h0 = ad.concat_rows([
        encode_all(user_feats, params, config),
        encode_all(item_feats, params, config),
    ])
    return propagate(graph, h0, params, config)


def materialize_embeddings(user_feats, item_feats, graph, params, config):
    """Propagated embeddings as plain arrays (U, V) for scoring/evaluation."""
    h = forward_node_embeddings(user_feats, item_feats, graph, params, config)
    nu = graph.n_users
    return h.value[:nu].copy(), h.value[nu:].copy()


def score(z_u: np.ndarray, z_v: np.ndarray) -> float:
    """Interaction probability from two embedding vectors."""
    zu = np.asarray(z_u, dtype=np.float64).reshape(-1)
    zv = np.asarray(z_v, dtype=np.float64).reshape(-1)
    if zu.shape != zv.shape:
        raise ad.ShapeError(f"score: dimensions differ, {zu.shape} vs {zv.shape}")
    x = float(zu @ zv)
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def score_matrix(z_u: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Scores of one user vector against a stack of item vectors."""
    logits = candidates @ np.asarray(z_u).reshape(-1)
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    e = np.exp(logits[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def info_nce_rows(q: ad.Node, k_pos: ad.Node, k_negs: ad.Node, n_negs: int,
                  temperature: float, include_positive: bool = True) -> ad.Node:
    """Per-positive contrastive losses as a (B, 1) column.

    k_negs stacks the negatives row-major: rows [b*n_negs, (b+1)*n_negs)
    belong to positive b.
    """
    b = q.shape[0]
    if k_negs.shape[0] != b * n_negs:
        raise ad.ShapeError(
            f"expected {b * n_negs} negative rows, got {k_negs.shape[0]}")
    inv_t = 1.0 / temperature
    pos = ad.scale(ad.row_dot(q, k_pos), inv_t)
    q_rep = ad.gather_rows(q, np.repeat(np.arange(b), n_negs))
    neg = ad.reshape(ad.scale(ad.row_dot(q_rep, k_negs), inv_t), b, n_negs)
    if include_positive:
        denom = ad.logsumexp_rows(ad.concat_cols([pos, neg]))
    else:
        denom = ad.logsumexp_rows(neg)
    return ad.sub(denom, pos)


def info_nce_loss(q, k_pos, k_negs, temperature: float,
                  include_positive: bool = True) -> ad.Node:
    """Contrastive loss for one positive against its negative set."""
    q = q if isinstance(q, ad.Node) else ad.constant(q)
    k_pos = k_pos if isinstance(k_pos, ad.Node) else ad.constant(k_pos)
    k_negs = k_negs if isinstance(k_negs, ad.Node) else ad.constant(k_negs)
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    n = k_negs.shape[0]
    if n < 1:
        raise ValueError("need at least one negative")
    return ad.mean(info_nce_rows(q, k_pos, k_negs, n, temperature, include_positive))


PRED_CLAMP = 1e-7


def bce_loss(preds: ad.Node, labels: np.ndarray) -> ad.Node:
    """Mean binary cross entropy; predictions clamped before the logs."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    if preds.shape != (y.shape[0], 1):
        raise ad.ShapeError(f"preds shape {preds.shape} does not match {y.shape[0]} labels")
    p = ad.clip(preds, PRED_CLAMP, 1.0 - PRED_CLAMP)
    pos_term = ad.mul(ad.constant(y), ad.log(p))
    neg_term = ad.mul(ad.constant(1.0 - y), ad.log(ad.sub(ad.constant(np.ones_like(y)), p)))
    return ad.scale(ad.mean(ad.add(pos_term, neg_term)), -1.0)


@dataclass
class TrainBatch:
    """Dense-id index arrays for one optimization step.

    bce_neg_items has one row of sampled negatives per positive; cl_neg_items
    likewise (empty when the contrastive term is off).
    """

    users: np.ndarray          # (B,)
    pos_items: np.ndarray      # (B,)
    bce_neg_items: np.ndarray  # (B, k_bce)
    cl_neg_items: np.ndarray   # (B, n_cl) or (B, 0)


@dataclass
class ModelInputs:
    user_feats: SideFeatures
    item_feats: SideFeatures
    graph: BipartiteGraph


def total_loss(batch: TrainBatch, inputs: ModelInputs, params: ModelParams,
               config: ModelConfig) -> ad.Node:
    """Joint objective: recommendation cross entropy plus the weighted
    contrastive term (skipped entirely when disabled, so losses match the
    plain BCE bit for bit)."""
    h = forward_node_embeddings(inputs.user_feats, inputs.item_feats,
                                inputs.graph, params, config)
    nu = inputs.graph.n_users
    b = batch.users.shape[0]
    k_bce = batch.bce_neg_items.shape[1]

    pair_users = np.concatenate([batch.users, np.repeat(batch.users, k_bce)])
    pair_items = np.concatenate([batch.pos_items, batch.bce_neg_items.reshape(-1)])
    labels = np.concatenate([np.ones(b), np.zeros(b * k_bce)])
    z_u = ad.gather_rows(h, pair_users)
    z_i = ad.gather_rows(h, nu + pair_items)
    preds = ad.sigmoid(ad.row_dot(z_u, z_i))
    rec = bce_loss(preds, labels)

    if not config.uses_contrastive or batch.cl_neg_items.shape[1] == 0:
        return rec
    n_cl = batch.cl_neg_items.shape[1]
    q = ad.gather_rows(h, batch.users)
    k_pos = ad.gather_rows(h, nu + batch.pos_items)
    k_neg = ad.gather_rows(h, nu + batch.cl_neg_items.reshape(-1))
    cl_rows = info_nce_rows(q, k_pos, k_neg, n_cl, config.temperature,
                            config.nce_positive_in_denominator)
    return ad.add(rec, ad.scale(ad.mean(cl_rows), config.cl_weight))
