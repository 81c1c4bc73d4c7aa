"""Graph transformer layer, graph normalization, and the composed block.

The layer is edge-indexed: per attention head, each directed edge (j -> i)
with scalar weight a_ij contributes a key ``w_key @ x_j + a_ij * w_edge`` and
a message ``w_value @ x_j + a_ij * w_edge``; attention logits are scaled dot
products against the query ``w_query @ x_i`` and softmax-normalized over each
destination's in-neighborhood. Head outputs are concatenated and mixed by
``w_out``. A node with no in-edges keeps only its self term ``w_self @ x_i``.

The block applies the layer, then per-feature graph normalization with a
learnable mean-shift factor, then ReLU (so block outputs are nonnegative).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ShapeError, ValidationError

GRAPH_NORM_EPS = 1e-5


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class GtHeadParams:
    w_self: Parameter   # d_head x d_in
    w_value: Parameter  # d_head x d_in
    w_query: Parameter  # d_head x d_in
    w_key: Parameter    # d_head x d_in
    w_edge: Parameter   # d_head, scaled by the edge weight

    def parameters(self):
        return [self.w_self, self.w_value, self.w_query, self.w_key, self.w_edge]


@dataclass
class GtLayerParams:
    heads: list
    w_out: Parameter  # d_out x (H * d_head)
    dropout_p: float = 0.0

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def d_in(self) -> int:
        return self.heads[0].w_self.shape[1]

    @property
    def d_head(self) -> int:
        return self.heads[0].w_self.shape[0]

    @property
    def d_out(self) -> int:
        return self.w_out.shape[0]

    def parameters(self):
        out = []
        for head in self.heads:
            out.extend(head.parameters())
        out.append(self.w_out)
        return out


@dataclass
class GraphNormParams:
    mean_scale: Parameter  # multiplies the subtracted per-feature mean
    gain: Parameter
    bias: Parameter

    def parameters(self):
        return [self.mean_scale, self.gain, self.bias]


@dataclass
class GtbParams:
    """One graph transformer block: layer + norm."""

    layer: GtLayerParams
    norm: GraphNormParams

    def parameters(self):
        return self.layer.parameters() + self.norm.parameters()


def init_gt_layer(
    name: str,
    d_in: int,
    d_out: int,
    num_heads: int,
    rng: np.random.Generator,
    d_head: int | None = None,
    dropout_p: float = 0.0,
) -> GtLayerParams:
    if d_head is None:
        d_head = max(1, math.ceil(d_out / num_heads))
    heads = []
    for h in range(num_heads):
        prefix = f"{name}.head{h}"
        heads.append(
            GtHeadParams(
                w_self=Parameter(f"{prefix}.w_self", glorot_uniform(rng, d_in, d_head, (d_head, d_in))),
                w_value=Parameter(f"{prefix}.w_value", glorot_uniform(rng, d_in, d_head, (d_head, d_in))),
                w_query=Parameter(f"{prefix}.w_query", glorot_uniform(rng, d_in, d_head, (d_head, d_in))),
                w_key=Parameter(f"{prefix}.w_key", glorot_uniform(rng, d_in, d_head, (d_head, d_in))),
                w_edge=Parameter(f"{prefix}.w_edge", glorot_uniform(rng, 1, d_head, (d_head,))),
            )
        )
    w_out = Parameter(
        f"{name}.w_out",
        glorot_uniform(rng, num_heads * d_head, d_out, (d_out, num_heads * d_head)),
    )
    return GtLayerParams(heads=heads, w_out=w_out, dropout_p=dropout_p)


def init_graph_norm(name: str, d: int) -> GraphNormParams:
    return GraphNormParams(
        mean_scale=Parameter(f"{name}.mean_scale", np.ones(d)),
        gain=Parameter(f"{name}.gain", np.ones(d)),
        bias=Parameter(f"{name}.bias", np.zeros(d)),
    )


def init_gtb(
    name: str,
    d_in: int,
    d_out: int,
    num_heads: int,
    rng: np.random.Generator,
    d_head: int | None = None,
    dropout_p: float = 0.0,
) -> GtbParams:
    layer = init_gt_layer(name, d_in, d_out, num_heads, rng, d_head, dropout_p)
    return GtbParams(layer=layer, norm=init_graph_norm(f"{name}.norm", d_out))


def _use(param: Parameter, tape) -> Tensor:
    # constant view when no tape is active (pure evaluation)
    return param.use(tape) if tape is not None else Tensor(param.values)


def _check_edges(n, edge_src, edge_dst, edge_weights):
    src = np.asarray(edge_src, dtype=np.int64)
    dst = np.asarray(edge_dst, dtype=np.int64)
    if src.shape != dst.shape or src.ndim != 1:
        raise ShapeError("edge endpoint arrays must be equal-length vectors")
    if src.size and (src.min() < 0 or src.max() >= n or dst.min() < 0 or dst.max() >= n):
        raise ValidationError(f"edge references a node outside [0, {n})")
    wv = edge_weights.values if isinstance(edge_weights, Tensor) else np.asarray(edge_weights)
    if wv.shape != src.shape:
        raise ShapeError("one scalar weight per edge required")
    return src, dst


def gt_layer_forward(
    params: GtLayerParams,
    x: Tensor,
    edge_src,
    edge_dst,
    edge_weights,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Multi-head attention update over the given directed edges.

    ``edge_weights`` may be a constant array or a tensor on the same tape
    (the latter lets gradients flow through predicted edge weights).
    """
    if x.values.ndim != 2:
        raise ShapeError(f"node features must be a matrix, got {x.shape}")
    n = x.shape[0]
    if x.shape[1] != params.d_in:
        raise ShapeError(f"feature width {x.shape[1]} != layer d_in {params.d_in}")
    src, dst = _check_edges(n, edge_src, edge_dst, edge_weights)
    if not isinstance(edge_weights, Tensor):
        edge_weights = Tensor(edge_weights)
    tape = x.tape
    inv_sqrt_d = 1.0 / math.sqrt(params.d_head)

    head_outputs = []
    for head in params.heads:
        w_self = _use(head.w_self, tape)
        x_self = ad.matmul(x, ad.transpose(w_self))
        if src.size == 0:
            head_outputs.append(x_self)
            continue
        w_value = _use(head.w_value, tape)
        w_query = _use(head.w_query, tape)
        w_key = _use(head.w_key, tape)
        w_edge = _use(head.w_edge, tape)

        edge_term = ad.outer_vec(edge_weights, w_edge)  # E x d_head
        keys = ad.add(ad.gather_rows(ad.matmul(x, ad.transpose(w_key)), src), edge_term)
        queries = ad.gather_rows(ad.matmul(x, ad.transpose(w_query)), dst)
        logits = ad.scale(ad.row_dot(queries, keys), inv_sqrt_d)
        alpha = ad.segment_softmax(logits, dst)
        if training and params.dropout_p > 0.0:
            alpha = ad.dropout(alpha, params.dropout_p, training, rng)
        messages = ad.add(
            ad.gather_rows(ad.matmul(x, ad.transpose(w_value)), src), edge_term
        )
        aggregated = ad.segment_sum(ad.scale_rows(messages, alpha), dst, n)
        head_outputs.append(ad.add(x_self, aggregated))

    w_out = _use(params.w_out, tape)
    return ad.matmul(ad.concat_features(head_outputs), ad.transpose(w_out))


def graph_norm(params: GraphNormParams, x: Tensor) -> Tensor:
    """Per-feature normalization over the graph's nodes with learnable
    mean-shift, gain and bias."""
    tape = x.tape
    mean_scale = _use(params.mean_scale, tape)
    gain = _use(params.gain, tape)
    bias = _use(params.bias, tape)
    mean, var = ad.feature_mean_var(x)
    centered = ad.sub_rowvec(x, ad.mul(mean_scale, mean))
    std = ad.sqrt(ad.add_const(var, GRAPH_NORM_EPS))
    return ad.add_rowvec(ad.mul_rowvec(ad.div_rowvec(centered, std), gain), bias)


def gtb_forward(
    params: GtbParams,
    x: Tensor,
    edge_src,
    edge_dst,
    edge_weights,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    hidden = gt_layer_forward(
        params.layer, x, edge_src, edge_dst, edge_weights, training, rng
    )
    return ad.relu(graph_norm(params.norm, hidden))
