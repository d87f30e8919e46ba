"""Graph transformer spectrum predictor.

Node embeddings pass through ``num_layers`` pre-norm transformer layers
whose attention logits carry two structural terms: a per-head scalar
looked up by shortest-path-distance bucket, and an edge-path term
``c_ij = mean_p w_p . e_p`` over the edges on the stored shortest path.
The readout node's final embedding, concatenated with the metadata vector,
feeds an MLP whose ReLU output is the binned spectrum.

Graphs are processed in padded batches; padded key positions are masked
out of every softmax so each graph's result does not depend on its batch.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphprep import NODE_FEATURES, EncodingConfig, PreparedGraph
from .spectra import BinnedSpectrum

__all__ = [
    "ModelConfig",
    "ModelParams",
    "GraphBatch",
    "AttentionMap",
    "init_params",
    "collate",
    "forward",
    "encode",
    "attention_logits",
    "predict",
    "attention_map",
    "precursor_mask",
    "predict_batches",
    "Predictor",
]

_MASK_VALUE = -1e9


@dataclass
class ModelConfig:
    num_layers: int = 2
    hidden_dim: int = 64
    attn_dim_per_head: int = 16
    num_heads: int = 4
    ffn_dim: int = 128
    mlp_hidden_dims: list = field(default_factory=lambda: [512])
    output_bins: int = 1000
    dropout_p: float = 0.0
    metadata_dim: int = 6
    bin_width: float = 1.0
    mz_min: float = 0.0
    mask_precursor: bool = False
    # starting value of the final head bias; positive keeps every output bin
    # above the relu kink at step 0
    output_bias_init: float = 0.0
    # layer-normalize the readout before it meets the metadata in the head
    head_norm: bool = False
    encoding: EncodingConfig = field(default_factory=EncodingConfig)

    def __post_init__(self):
        if isinstance(self.encoding, dict):
            self.encoding = EncodingConfig.from_dict(self.encoding)
        self.mlp_hidden_dims = list(self.mlp_hidden_dims)
        dims = [self.hidden_dim, self.attn_dim_per_head, self.num_heads, self.ffn_dim, self.output_bins]
        if self.num_layers < 0 or any(d < 1 for d in dims + self.mlp_hidden_dims):
            raise ValueError("model dimensions must be >= 1 (num_layers >= 0)")
        if self.metadata_dim < 0:
            raise ValueError("metadata_dim must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @property
    def node_features(self) -> tuple[str, ...]:
        if self.encoding.use_degree:
            return NODE_FEATURES
        return tuple(f for f in NODE_FEATURES if f != "degree")


class ModelParams(dict):
    """Ordered mapping of parameter name to trainable :class:`Tensor`."""

    def tensors(self) -> list[Tensor]:
        return list(self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {k: t.grad for k, t in self.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.items()}

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.items():
            t.data[...] = arrays[k]

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.values())

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return cls(
            (k, Tensor(np.array(v, copy=True), requires_grad=True, dtype=np.asarray(v).dtype, name=k))
            for k, v in arrays.items()
        )


@dataclass
class AttentionMap:
    weights: np.ndarray
    elements: tuple = ()

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape or (fan_in, fan_out))


def init_params(config: ModelConfig, seed: int = 0, dtype=None) -> ModelParams:
    """Glorot-normal weights, zero biases and zero SPD bias table."""
    rng = np.random.default_rng(seed)
    enc = config.encoding
    d_model = config.hidden_dim
    d_head = config.attn_dim_per_head
    inner = config.num_heads * d_head
    arrays: dict[str, np.ndarray] = {}
    for name in config.node_features:
        rows = enc.node_table_size(name)
        arrays[f"node_emb.{name}"] = _glorot(rng, rows, d_model)
    arrays["spd_bias"] = np.zeros((enc.n_spd_buckets, config.num_heads))
    arrays["edge_emb"] = _glorot(rng, enc.n_edge_types + 1, d_head)
    arrays["path_weight"] = _glorot(rng, enc.max_path_len, d_head)
    for layer in range(config.num_layers):
        p = f"layers.{layer}."
        arrays[p + "ln1.scale"] = np.ones(d_model)
        arrays[p + "ln1.shift"] = np.zeros(d_model)
        arrays[p + "wq"] = _glorot(rng, d_model, inner)
        arrays[p + "wk"] = _glorot(rng, d_model, inner)
        arrays[p + "wv"] = _glorot(rng, d_model, inner)
        arrays[p + "wo"] = _glorot(rng, inner, d_model)
        arrays[p + "bo"] = np.zeros(d_model)
        arrays[p + "ln2.scale"] = np.ones(d_model)
        arrays[p + "ln2.shift"] = np.zeros(d_model)
        arrays[p + "w1"] = _glorot(rng, d_model, config.ffn_dim)
        arrays[p + "b1"] = np.zeros(config.ffn_dim)
        arrays[p + "w2"] = _glorot(rng, config.ffn_dim, d_model)
        arrays[p + "b2"] = np.zeros(d_model)
    dims = [d_model + config.metadata_dim] + config.mlp_hidden_dims + [config.output_bins]
    for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        arrays[f"head.w{k}"] = _glorot(rng, fan_in, fan_out)
        arrays[f"head.b{k}"] = np.zeros(fan_out)
    arrays[f"head.b{len(dims) - 2}"][:] = config.output_bias_init
    if config.head_norm:
        arrays["head.ln.scale"] = np.ones(d_model)
        arrays["head.ln.shift"] = np.zeros(d_model)
    dtype = dtype or ad.get_default_dtype()
    return ModelParams(
        (k, Tensor(v, requires_grad=True, dtype=dtype, name=k)) for k, v in arrays.items()
    )


@dataclass
class GraphBatch:
    node_idx: np.ndarray  # (B, n, F)
    spd: np.ndarray  # (B, n, n)
    paths: np.ndarray  # (B, n, n, P)
    path_count: np.ndarray  # (B, n, n) number of stored path edges
    node_mask: np.ndarray  # (B, n) True for readout and real atoms
    metadata: np.ndarray  # (B, metadata_dim)
    precursor_mz: np.ndarray | None = None  # (B,)

    @property
    def size(self) -> int:
        return self.node_idx.shape[0]

    @property
    def n_max(self) -> int:
        return self.node_idx.shape[1]


def collate(
    graphs: Sequence[PreparedGraph],
    metadata: Sequence[np.ndarray] | np.ndarray | None,
    config: ModelConfig,
    precursor_mz: Sequence[float] | None = None,
) -> GraphBatch:
    """Pad prepared graphs to a common node count."""
    enc = config.encoding
    B = len(graphs)
    n = max(g.n_nodes for g in graphs)
    P = enc.max_path_len
    cols = [NODE_FEATURES.index(f) for f in config.node_features]
    node_idx = np.zeros((B, n, len(cols)), dtype=np.int64)
    spd = np.zeros((B, n, n), dtype=np.int64)
    paths = np.full((B, n, n, P), enc.edge_sentinel, dtype=np.int64)
    count = np.zeros((B, n, n), dtype=np.int64)
    mask = np.zeros((B, n), dtype=bool)
    for b, g in enumerate(graphs):
        k = g.n_nodes
        if g.edge_path_indices.shape[-1] != P:
            raise ValueError("prepared graph path length does not match the encoding config")
        node_idx[b, :k] = g.node_feature_indices[:, cols]
        spd[b, :k, :k] = g.spd_bucket
        paths[b, :k, :k] = g.edge_path_indices
        count[b, :k, :k] = np.minimum(g.path_len, P)
        mask[b, :k] = True
    if metadata is None:
        meta = np.zeros((B, config.metadata_dim))
    else:
        meta = np.asarray(metadata, dtype=np.float64).reshape(B, -1)
    if meta.shape[1] != config.metadata_dim:
        raise ValueError(f"metadata vectors have {meta.shape[1]} entries, model expects {config.metadata_dim}")
    prec = None if precursor_mz is None else np.asarray(precursor_mz, dtype=np.float64)
    return GraphBatch(node_idx, spd, paths, count, mask, meta, prec)


def _check_vocab(batch: GraphBatch, params: ModelParams, config: ModelConfig) -> None:
    for f, name in enumerate(config.node_features):
        rows = params[f"node_emb.{name}"].shape[0]
        if batch.node_idx[..., f].max(initial=0) >= rows:
            raise ValueError(f"node feature {name!r} index exceeds the embedding table ({rows} rows)")
    if batch.spd.max(initial=0) >= params["spd_bias"].shape[0]:
        raise ValueError("SPD bucket exceeds the bias table")
    if batch.paths.max(initial=0) >= params["edge_emb"].shape[0]:
        raise ValueError("edge type exceeds the edge embedding table")


def _edge_path_term(batch: GraphBatch, params: ModelParams) -> Tensor:
    """``c_ij`` for every node pair, shape (B, 1, n, n)."""
    E = params["edge_emb"]
    W = params["path_weight"]
    P = W.shape[0]
    table = ad.matmul(E, ad.transpose(W))  # (n_edge_types + 1, P): e_t . w_p
    flat = ad.reshape(table, (-1, 1))
    idx = batch.paths * P + np.arange(P)
    terms = ad.reshape(ad.embedding(flat, idx), batch.paths.shape)
    valid = (np.arange(P) < batch.path_count[..., None]).astype(E.data.dtype)
    total = ad.reduce_sum(ad.mul(terms, valid), axis=-1)
    denom = np.maximum(batch.path_count, 1).astype(E.data.dtype)
    c = ad.div(total, denom)
    B, n = batch.size, batch.n_max
    return ad.reshape(c, (B, 1, n, n))


def _spd_term(batch: GraphBatch, params: ModelParams) -> Tensor:
    """``b_ij`` per head, shape (B, H, n, n)."""
    b = ad.embedding(params["spd_bias"], batch.spd)  # (B, n, n, H)
    return ad.transpose(b, (0, 3, 1, 2))


def _embed_nodes(batch: GraphBatch, params: ModelParams, config: ModelConfig) -> Tensor:
    h = None
    for f, name in enumerate(config.node_features):
        e = ad.embedding(params[f"node_emb.{name}"], batch.node_idx[..., f])
        h = e if h is None else ad.add(h, e)
    return h


def _split_heads(x: Tensor, B: int, n: int, H: int, d: int) -> Tensor:
    return ad.transpose(ad.reshape(x, (B, n, H, d)), (0, 2, 1, 3))


def _layer(
    h: Tensor,
    bias: Tensor,
    key_mask: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    layer: int,
    train: bool,
    rng,
) -> tuple[Tensor, Tensor]:
    p = f"layers.{layer}."
    B, n, _ = h.shape
    H, d = config.num_heads, config.attn_dim_per_head
    x = ad.layer_norm(h, params[p + "ln1.scale"], params[p + "ln1.shift"])
    q = _split_heads(ad.matmul(x, params[p + "wq"]), B, n, H, d)
    k = _split_heads(ad.matmul(x, params[p + "wk"]), B, n, H, d)
    v = _split_heads(ad.matmul(x, params[p + "wv"]), B, n, H, d)
    logits = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    logits = ad.add(logits, bias)
    logits = ad.masked_fill(logits, key_mask, _MASK_VALUE)
    attn = ad.softmax(logits, axis=-1)
    o = ad.matmul(ad.dropout(attn, config.dropout_p, train, rng), v)  # (B, H, n, d)
    o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (B, n, H * d))
    o = ad.add(ad.matmul(o, params[p + "wo"]), params[p + "bo"])
    h = ad.add(h, ad.dropout(o, config.dropout_p, train, rng))
    x = ad.layer_norm(h, params[p + "ln2.scale"], params[p + "ln2.shift"])
    f = ad.gelu(ad.add(ad.matmul(x, params[p + "w1"]), params[p + "b1"]))
    f = ad.add(ad.matmul(ad.dropout(f, config.dropout_p, train, rng), params[p + "w2"]), params[p + "b2"])
    h = ad.add(h, ad.dropout(f, config.dropout_p, train, rng))
    return h, attn


def _encode_batch(batch, params, config, train, rng, keep_attention=False):
    _check_vocab(batch, params, config)
    h = _embed_nodes(batch, params, config)
    bias = ad.add(_spd_term(batch, params), _edge_path_term(batch, params))
    key_mask = ~batch.node_mask[:, None, None, :]
    attentions = []
    for layer in range(config.num_layers):
        h, attn = _layer(h, bias, key_mask, params, config, layer, train, rng)
        if keep_attention:
            attentions.append(attn.data)
    return h, attentions


def precursor_mask(precursor_mz: np.ndarray, config: ModelConfig) -> np.ndarray:
    """1 for bins at or below the precursor bin + 1, else 0; shape (B, m)."""
    top = np.floor((np.asarray(precursor_mz) - config.mz_min) / config.bin_width).astype(np.int64) + 1
    return (np.arange(config.output_bins)[None, :] <= top[:, None]).astype(ad.get_default_dtype())


def forward(
    batch: GraphBatch,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Predicted spectra for a batch, shape (B, output_bins), all entries >= 0."""
    h, _ = _encode_batch(batch, params, config, train, rng)
    readout = ad.index(h, (slice(None), 0))
    if config.head_norm:
        readout = ad.layer_norm(readout, params["head.ln.scale"], params["head.ln.shift"])
    z = ad.concat([readout, Tensor(batch.metadata.astype(h.data.dtype))], axis=-1)
    n_hidden = len(config.mlp_hidden_dims)
    for k in range(n_hidden):
        z = ad.gelu(ad.add(ad.matmul(z, params[f"head.w{k}"]), params[f"head.b{k}"]))
        z = ad.dropout(z, config.dropout_p, train, rng)
    out = ad.relu(ad.add(ad.matmul(z, params[f"head.w{n_hidden}"]), params[f"head.b{n_hidden}"]))
    if config.mask_precursor:
        if batch.precursor_mz is None:
            raise ValueError("mask_precursor is on but the batch has no precursor m/z")
        out = ad.mul(out, precursor_mask(batch.precursor_mz, config).astype(out.data.dtype))
    return out


def encode(
    prepared: PreparedGraph,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Final-layer readout embedding of a single graph."""
    batch = collate([prepared], None, config)
    h, _ = _encode_batch(batch, params, config, train, rng)
    return h.data[0, 0].copy()


def attention_logits(
    h: np.ndarray | Tensor,
    params: ModelParams,
    prepared: PreparedGraph,
    layer: int,
    head: int,
    config: ModelConfig,
) -> np.ndarray:
    """Pre-softmax attention logits of one head for one graph, shape (n, n).

    ``h`` is the layer input (n, hidden_dim); the layer's first layer norm
    is applied before projection, as in the forward pass.
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    n = prepared.n_nodes
    if h.shape != (n, config.hidden_dim):
        raise ad.ShapeError("attention_logits", h.shape, (n, config.hidden_dim))
    batch = collate([prepared], None, config)
    p = f"layers.{layer}."
    d = config.attn_dim_per_head
    x = ad.layer_norm(h, params[p + "ln1.scale"], params[p + "ln1.shift"]).data
    cols = slice(head * d, (head + 1) * d)
    q = x @ params[p + "wq"].data[:, cols]
    k = x @ params[p + "wk"].data[:, cols]
    content = q @ k.T / math.sqrt(d)
    b = params["spd_bias"].data[prepared.spd_bucket, head]
    c = _edge_path_term(batch, params).data[0, 0]
    return content + b + c


def predict(
    prepared: PreparedGraph,
    metadata_vec: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    precursor_mz: float | None = None,
) -> BinnedSpectrum:
    batch = collate(
        [prepared], [metadata_vec], config, None if precursor_mz is None else [precursor_mz]
    )
    out = forward(batch, params, config, train, rng)
    return BinnedSpectrum(out.data[0].astype(np.float64), config.bin_width, config.mz_min)


def predict_batches(
    graphs: Sequence[PreparedGraph],
    metadata: Sequence[np.ndarray],
    params: ModelParams,
    config: ModelConfig,
    precursor_mz: Sequence[float] | None = None,
    batch_size: int = 64,
) -> np.ndarray:
    """Inference over many graphs; returns an array (N, output_bins)."""
    out = []
    for start in range(0, len(graphs), batch_size):
        stop = start + batch_size
        batch = collate(
            graphs[start:stop],
            metadata[start:stop],
            config,
            None if precursor_mz is None else precursor_mz[start:stop],
        )
        out.append(forward(batch, params, config).data.astype(np.float64))
    if not out:
        return np.zeros((0, config.output_bins))
    return np.concatenate(out, axis=0)


def attention_map(prepared: PreparedGraph, params: ModelParams, config: ModelConfig) -> AttentionMap:
    """Readout-row attention rollout over real atoms.

    Per layer the softmaxed attention is averaged over heads; layer
    matrices are multiplied with the first layer rightmost; the readout row
    is taken, its self entry dropped and the rest renormalized.
    """
    batch = collate([prepared], None, config)
    _, attentions = _encode_batch(batch, params, config, False, None, keep_attention=True)
    n = prepared.n_nodes
    rollout = np.eye(n)
    for attn in attentions:
        rollout = attn[0].mean(axis=0).astype(np.float64) @ rollout
    row = rollout[0, 1:]
    total = row.sum()
    weights = row / total if total > 0 else np.full(n - 1, 1.0 / max(n - 1, 1))
    return AttentionMap(weights, prepared.elements)


def iter_minibatches(n: int, batch_size: int, rng: np.random.Generator | None) -> Iterator[np.ndarray]:
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


class Predictor:
    """Trained parameters bundled with their configs.

    Calling it on a sequence of records (anything with ``graph``,
    ``metadata_vec`` and ``precursor_mz`` attributes) returns stacked
    predictions of shape (N, output_bins).
    """

    def __init__(self, params: ModelParams, config: ModelConfig, scheme=None, batch_size: int = 64):
        from .spectra import MetadataScheme

        self.params = params
        self.config = config
        self.scheme = scheme or MetadataScheme()
        self.batch_size = batch_size

    def __call__(self, records) -> np.ndarray:
        return predict_batches(
            [r.graph for r in records],
            [r.metadata_vec for r in records],
            self.params,
            self.config,
            [r.precursor_mz for r in records],
            self.batch_size,
        )

    def predict_spectrum(self, prepared: PreparedGraph, metadata) -> BinnedSpectrum:
        from .spectra import encode_metadata

        vec = encode_metadata(metadata, self.scheme)
        return predict(prepared, vec, self.params, self.config, precursor_mz=metadata.precursor_mz)

    def attention_map(self, prepared: PreparedGraph) -> AttentionMap:
        return attention_map(prepared, self.params, self.config)
