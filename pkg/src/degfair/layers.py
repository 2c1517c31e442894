"""Degree-debiased GNN layers over GCN, GraphSAGE, and GAT aggregation.

Each layer combines a base neighborhood aggregation with a learned,
degree-conditioned debiasing context: a context embedding (mean over the
r-hop local context) is passed through a group-specific linear map and
modulated feature-wise by scaling/shifting vectors generated from a
sinusoidal encoding of the node's degree. Low-degree and high-degree nodes
select different debiasing parameters, and the selected context is added
into the aggregation pre-activation with weight ``eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from degfair.autodiff import (
    FixedSparse,
    Tensor,
    add,
    add_scaled,
    affine,
    dropout,
    film_modulate,
    gather_rows,
    leaky_relu,
    mask_blend,
    matmul,
    relu,
    scalar_mul,
    scale_rows,
    segment_softmax,
    segment_sum,
    softmax_rows,
    sparse_matmul,
)
from degfair.graphs import Graph, GroupAssignment, local_contexts

__all__ = [
    "Linear",
    "GatHead",
    "LayerParams",
    "ModelParams",
    "LayerTraceEntry",
    "ForwardTrace",
    "GraphOperators",
    "degree_encoding",
    "degree_encoding_matrix",
    "context_operator",
    "input_features",
    "context_embedding",
    "film_factors",
    "debias_context",
    "build_operators",
    "base_aggregate",
    "fair_layer_forward",
    "model_forward",
    "base_forward",
    "infer_probs",
    "infer_base_probs",
]


@dataclass
class Linear:
    """One fully connected layer: x @ w + b."""

    w: Tensor
    b: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.w, self.b)


@dataclass
class GatHead:
    """Projection plus the two attention vectors of one attention head."""

    w: Tensor
    att_self: Tensor  # scores the aggregating node's own projection
    att_nbr: Tensor  # scores each neighbor's projection


@dataclass
class LayerParams:
    """All learnable tensors of one debiased layer.

    ``omega`` holds the base-aggregator weights ("w" for GCN, "w_self" /
    "w_neigh" for GraphSAGE, "heads" for GAT). ``debias_low`` and
    ``debias_high`` map context embeddings to the two groups' debiasing
    contexts; ``film_scale`` / ``film_shift`` generate the modulation
    vectors from the degree encoding.
    """

    omega: dict
    debias_low: Linear
    debias_high: Linear
    film_scale: Linear
    film_shift: Linear

    def omega_tensors(self) -> list[Tensor]:
        out = []
        if "heads" in self.omega:
            for head in self.omega["heads"]:
                out.extend([head.w, head.att_self, head.att_nbr])
        else:
            out.extend(self.omega[k] for k in sorted(self.omega) if k != "b")
        if "b" in self.omega:
            out.append(self.omega["b"])
        return out

    def omega_weights(self) -> list[Tensor]:
        """Aggregator weight matrices, excluding the output bias."""
        return [t for t in self.omega_tensors() if t is not self.omega.get("b")]

    def debias_tensors(self) -> list[Tensor]:
        out = []
        for lin in (self.debias_low, self.debias_high, self.film_scale, self.film_shift):
            out.extend([lin.w, lin.b])
        return out


@dataclass
class ModelParams:
    """Parameters of the full multi-layer model."""

    kind: str  # gcn | sage | gat
    layers: list[LayerParams]

    def all_tensors(self, include_debias: bool = True) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in self.layers:
            out.extend(layer.omega_tensors())
            if include_debias:
                out.extend(layer.debias_tensors())
        return out

    def weight_tensors(self, include_debias: bool = True) -> list[Tensor]:
        """Weight matrices only (biases excluded), for regularization."""
        out: list[Tensor] = []
        for layer in self.layers:
            out.extend(layer.omega_weights())
            if include_debias:
                for lin in (
                    layer.debias_low,
                    layer.debias_high,
                    layer.film_scale,
                    layer.film_shift,
                ):
                    out.append(lin.w)
        return out


@dataclass
class LayerTraceEntry:
    """Per-layer activations plus everything the training constraints need.

    Both groups' debiasing contexts are kept for every node: the
    cross-group constraint penalizes the context a node did *not* use.
    """

    h: Tensor
    debias_low: Tensor
    debias_high: Tensor
    scale: Tensor
    shift: Tensor


@dataclass
class ForwardTrace:
    layers: list[LayerTraceEntry]
    probs: Tensor


# ----------------------------------------------------------- degree encoding


def degree_encoding_matrix(degrees: np.ndarray, width: int) -> np.ndarray:
    """Sinusoidal encodings of degree values, one row per input degree.

    Pair i of columns (2i, 2i+1) holds sin/cos of degree / 10000^(2i/width),
    so entries lie in [-1, 1] and nearby degrees get nearby encodings.
    """
    if width < 2 or width % 2 != 0:
        raise ValueError(f"encoding width must be even and >= 2, got {width}")
    degrees = np.asarray(degrees, dtype=np.float64)
    if np.any(degrees < 0):
        raise ValueError("degrees must be non-negative")
    pair = np.arange(width // 2, dtype=np.float64)
    freq = 1.0 / np.power(10000.0, 2.0 * pair / width)
    angle = degrees[:, None] * freq[None, :]
    enc = np.empty((degrees.shape[0], width))
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle)
    return enc


def degree_encoding(degree: float, width: int) -> np.ndarray:
    """Encoding of a single degree value (1-D, length ``width``)."""
    return degree_encoding_matrix(np.array([float(degree)]), width)[0]


def _even(width: int) -> int:
    return width if width % 2 == 0 else width + 1


# --------------------------------------------------------- graph operators


def context_operator(num_nodes: int, offsets: np.ndarray, members: np.ndarray) -> FixedSparse:
    """Mean-pooling operator over per-node context sets in CSR form."""
    sizes = np.diff(offsets)
    values = np.repeat(
        np.divide(1.0, sizes, out=np.zeros(sizes.shape), where=sizes > 0),
        sizes,
    )
    mat = sparse.csr_matrix(
        (values, members, offsets), shape=(num_nodes, num_nodes)
    )
    return FixedSparse(mat)


def _gcn_operator(g: Graph) -> FixedSparse:
    """Symmetric normalization with self-loops: D^-1/2 (A+I) D^-1/2."""
    offsets, members = local_contexts(g, 1)  # A+I pattern, rows sorted
    d = np.diff(offsets).astype(np.float64)  # degree + 1
    inv_sqrt = 1.0 / np.sqrt(d)
    centers = np.repeat(np.arange(g.num_nodes), np.diff(offsets))
    values = inv_sqrt[centers] * inv_sqrt[members]
    mat = sparse.csr_matrix((values, members, offsets), shape=(g.num_nodes,) * 2)
    return FixedSparse(mat)


def _neighbor_mean_operator(g: Graph) -> FixedSparse:
    """Row-normalized adjacency without self-loops; zero rows if isolated."""
    deg = np.diff(g.csr_offsets).astype(np.float64)
    values = np.repeat(
        np.divide(1.0, deg, out=np.zeros(deg.shape), where=deg > 0), g.degrees
    )
    mat = sparse.csr_matrix(
        (values, g.csr_neighbors, g.csr_offsets), shape=(g.num_nodes,) * 2
    )
    return FixedSparse(mat)


@dataclass
class GraphOperators:
    """Constant per-graph structure shared by every layer and epoch.

    Built once by :func:`build_operators`; holds the pooling/normalization
    operators, the attention edge arrays (A+I pattern), group indicator
    columns, and cached degree encodings per unique degree value.
    """

    num_nodes: int
    ctx_mean: FixedSparse
    low_mask: np.ndarray
    unique_degrees: np.ndarray
    degree_inverse: np.ndarray
    gcn_norm: FixedSparse | None = None
    nbr_mean: FixedSparse | None = None
    att_offsets: np.ndarray | None = None
    att_members: np.ndarray | None = None
    _encodings: dict = field(default_factory=dict)

    def encoding(self, width: int) -> Tensor:
        """Constant encoding rows for the unique degree values."""
        if width not in self._encodings:
            self._encodings[width] = Tensor(
                degree_encoding_matrix(self.unique_degrees, width)
            )
        return self._encodings[width]


def build_operators(
    g: Graph, r_context: int, groups: GroupAssignment, kind: str
) -> GraphOperators:
    """Precompute every graph-dependent constant the layers need.

    ``groups`` must cover all nodes (a threshold contrast over the full
    node set): the aggregation needs a debiasing group for every node,
    including validation/test nodes.
    """
    low, high = groups.groups[0], groups.groups[1]
    covered = np.zeros(g.num_nodes, dtype=bool)
    covered[low] = True
    covered[high] = True
    if not covered.all() or low.size + high.size != g.num_nodes:
        raise ValueError("debiasing groups must partition the full node set")

    low_mask = np.zeros(g.num_nodes)
    low_mask[low] = 1.0
    offsets, members = local_contexts(g, r_context)
    deg1 = g.degrees.astype(np.float64)
    unique_degrees, degree_inverse = np.unique(deg1, return_inverse=True)

    ops = GraphOperators(
        num_nodes=g.num_nodes,
        ctx_mean=context_operator(g.num_nodes, offsets, members),
        low_mask=low_mask,
        unique_degrees=unique_degrees,
        degree_inverse=degree_inverse,
    )
    if kind == "gcn":
        ops.gcn_norm = _gcn_operator(g)
    elif kind == "sage":
        ops.nbr_mean = _neighbor_mean_operator(g)
    elif kind == "gat":
        ops.att_offsets, ops.att_members = local_contexts(g, 1)
    else:
        raise ValueError(f"unknown aggregator kind {kind!r}")
    return ops


# -------------------------------------------------------------- layer pieces


def input_features(g: Graph, feature_norm: str = "none") -> Tensor:
    """Input feature rows, optionally length-normalized.

    ``"l2"`` scales each row to unit Euclidean norm (zero rows are left
    alone), the usual preparation for count-style features.
    """
    if feature_norm == "none":
        return Tensor(g.features)
    if feature_norm == "l2":
        norms = np.linalg.norm(g.features, axis=1, keepdims=True)
        return Tensor(g.features / np.maximum(norms, 1e-12))
    raise ValueError(f'feature_norm must be "none" or "l2", got {feature_norm!r}')


def context_embedding(h_prev: Tensor, ctx_op: FixedSparse) -> Tensor:
    """Mean of the previous layer's rows over each node's local context."""
    return sparse_matmul(ctx_op, h_prev)


def film_factors(encoding: Tensor, scale_net: Linear, shift_net: Linear):
    """Generate feature-wise scale and shift rows from degree encodings."""
    return scale_net(encoding), shift_net(encoding)


def debias_context(
    ctx_emb: Tensor, scale: Tensor, shift: Tensor, net: Linear
) -> Tensor:
    """(scale + 1) * net(context) + shift, elementwise.

    Scaling is centered on one: zero scale/shift leaves net(context)
    untouched.
    """
    return film_modulate(net(ctx_emb), scale, shift)


def _gat_head(
    h_prev: Tensor, head: GatHead, offsets: np.ndarray, members: np.ndarray
) -> Tensor:
    z = matmul(h_prev, head.w)
    s_self = matmul(z, head.att_self)
    s_nbr = matmul(z, head.att_nbr)
    centers = np.repeat(np.arange(offsets.shape[0] - 1), np.diff(offsets))
    logits = add(gather_rows(s_self, centers), gather_rows(s_nbr, members))
    alpha = segment_softmax(leaky_relu(logits, 0.2), offsets)
    weighted = scale_rows(gather_rows(z, members), alpha)
    return segment_sum(weighted, offsets)


def base_aggregate(
    h_prev: Tensor, ops: GraphOperators, omega: dict, kind: str
) -> Tensor:
    """Pre-activation output of the plain base aggregator.

    GCN: normalized-adjacency propagation of h @ w. GraphSAGE: separate
    self and mean-neighbor transforms. GAT: attention over each node's
    closed neighborhood per head, heads averaged. Each aggregator ends with
    an output bias row; without one, a ReLU network is positively
    homogeneous and argmax-blind to the per-node magnitude that carries
    degree information.
    """
    try:
        if kind == "gcn":
            if ops.gcn_norm is None:
                raise ValueError("operators were not built for gcn")
            out = sparse_matmul(ops.gcn_norm, matmul(h_prev, omega["w"]))
        elif kind == "sage":
            if ops.nbr_mean is None:
                raise ValueError("operators were not built for sage")
            neigh = sparse_matmul(ops.nbr_mean, h_prev)
            out = add(
                matmul(h_prev, omega["w_self"]), matmul(neigh, omega["w_neigh"])
            )
        elif kind == "gat":
            if ops.att_offsets is None:
                raise ValueError("operators were not built for gat")
            heads = omega["heads"]
            out = _gat_head(h_prev, heads[0], ops.att_offsets, ops.att_members)
            for head in heads[1:]:
                out = add(
                    out, _gat_head(h_prev, head, ops.att_offsets, ops.att_members)
                )
            if len(heads) > 1:
                out = scalar_mul(out, 1.0 / len(heads))
        else:
            raise ValueError(f"unknown aggregator kind {kind!r}")
        return add(out, omega["b"])
    except KeyError as exc:
        raise ValueError(f"missing {kind} weight {exc.args[0]!r}") from None


def _activate(pre: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return relu(pre)
    if activation == "softmax":
        return softmax_rows(pre)
    if activation == "identity":
        return pre
    raise ValueError(f"unknown activation {activation!r}")


def fair_layer_forward(
    h_prev: Tensor,
    ops: GraphOperators,
    layer: LayerParams,
    kind: str,
    eps: float,
    activation: str,
) -> LayerTraceEntry:
    """One debiased layer: sigma(Aggr(h) + eps * selected debiasing context).

    Both groups' contexts are computed for every node (the unused one is
    needed by the cross-group constraint); the per-node selection picks the
    low-group context for low-degree nodes and vice versa. With eps == 0
    the addition is skipped entirely, so the output is bit-identical to the
    plain base aggregation.
    """
    out_width = layer.film_scale.b.shape[1]
    ctx = context_embedding(h_prev, ops.ctx_mean)
    enc = ops.encoding(_even(out_width))
    scale_u, shift_u = film_factors(enc, layer.film_scale, layer.film_shift)
    scale = gather_rows(scale_u, ops.degree_inverse)
    shift = gather_rows(shift_u, ops.degree_inverse)
    d_low = debias_context(ctx, scale, shift, layer.debias_low)
    d_high = debias_context(ctx, scale, shift, layer.debias_high)

    pre = base_aggregate(h_prev, ops, layer.omega, kind)
    if eps != 0.0:
        selected = mask_blend(ops.low_mask, d_low, d_high)
        pre = add_scaled(pre, selected, eps)
    return LayerTraceEntry(
        h=_activate(pre, activation),
        debias_low=d_low,
        debias_high=d_high,
        scale=scale,
        shift=shift,
    )


def model_forward(
    g: Graph,
    params: ModelParams,
    ops: GraphOperators,
    eps: float,
    dropout_rate: float = 0.0,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    dropout_input: bool = False,
    features: Tensor | None = None,
) -> ForwardTrace:
    """Full forward pass: ReLU hidden layers, softmax output layer.

    Dropout (train mode only) is applied to hidden activations, and to the
    input features as well when ``dropout_input`` is set. ``features``
    overrides the raw graph features (e.g. a normalized copy).
    """
    if train_mode and dropout_rate > 0.0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    h = features if features is not None else Tensor(g.features)
    if dropout_input:
        h = dropout(h, dropout_rate, train_mode, rng)
    entries = []
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        entry = fair_layer_forward(
            h, ops, layer, params.kind, eps, "softmax" if i == last else "relu"
        )
        entries.append(entry)
        h = entry.h
        if i != last:
            h = dropout(h, dropout_rate, train_mode, rng)
    return ForwardTrace(layers=entries, probs=entries[-1].h)


def _infer_base_pre(h: np.ndarray, ops: GraphOperators, omega: dict, kind: str) -> np.ndarray:
    """Plain-numpy mirror of base_aggregate for inference."""
    if kind == "gcn":
        out = ops.gcn_norm.fwd @ (h @ omega["w"].data)
    elif kind == "sage":
        out = h @ omega["w_self"].data + (ops.nbr_mean.fwd @ h) @ omega["w_neigh"].data
    else:
        heads = omega["heads"]
        offsets, members = ops.att_offsets, ops.att_members
        centers = np.repeat(np.arange(offsets.shape[0] - 1), np.diff(offsets))
        acc = None
        for head in heads:
            z = h @ head.w.data
            logits = (z @ head.att_self.data)[centers, 0] + (z @ head.att_nbr.data)[
                members, 0
            ]
            logits = np.where(logits > 0, logits, 0.2 * logits)
            seg_id = centers
            m = np.full(offsets.shape[0] - 1, -np.inf)
            np.maximum.at(m, seg_id, logits)
            e = np.exp(logits - m[seg_id])
            denom = np.bincount(seg_id, weights=e, minlength=m.shape[0])
            alpha = e / denom[seg_id]
            weighted = z[members] * alpha[:, None]
            csum = np.vstack([np.zeros((1, z.shape[1])), np.cumsum(weighted, axis=0)])
            part = csum[offsets[1:]] - csum[offsets[:-1]]
            acc = part if acc is None else acc + part
        out = acc / len(heads) if len(heads) > 1 else acc
    return out + omega["b"].data


def infer_probs(
    g: Graph,
    params: ModelParams,
    ops: GraphOperators,
    eps: float,
    features: Tensor | None = None,
) -> np.ndarray:
    """Dropout-free inference without the tape; returns probabilities.

    Each node's context goes through its own group's debiasing net only
    (the unused branch matters solely for training constraints), so this
    is the cheap path for prediction and per-epoch accuracy tracking.
    """
    h = features.data if features is not None else g.features
    low = ops.low_mask != 0
    high = ~low
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        pre = _infer_base_pre(h, ops, layer.omega, params.kind)
        if eps != 0.0:
            width = layer.film_scale.b.shape[1]
            ctx = ops.ctx_mean.fwd @ h
            enc = ops.encoding(_even(width)).data
            scale = (enc @ layer.film_scale.w.data + layer.film_scale.b.data)[
                ops.degree_inverse
            ]
            shift = (enc @ layer.film_shift.w.data + layer.film_shift.b.data)[
                ops.degree_inverse
            ]
            f = np.empty((g.num_nodes, width))
            f[low] = ctx[low] @ layer.debias_low.w.data + layer.debias_low.b.data
            f[high] = ctx[high] @ layer.debias_high.w.data + layer.debias_high.b.data
            pre = pre + eps * ((scale + 1.0) * f + shift)
        if i == last:
            z = pre - pre.max(axis=1, keepdims=True)
            e = np.exp(z)
            h = e / e.sum(axis=1, keepdims=True)
        else:
            h = np.where(pre > 0, pre, 0.0)
    return h


def infer_base_probs(
    g: Graph,
    params: ModelParams,
    ops: GraphOperators,
    features: Tensor | None = None,
) -> np.ndarray:
    """Dropout-free inference for the plain base model."""
    h = features.data if features is not None else g.features
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        pre = _infer_base_pre(h, ops, layer.omega, params.kind)
        if i == last:
            z = pre - pre.max(axis=1, keepdims=True)
            e = np.exp(z)
            h = e / e.sum(axis=1, keepdims=True)
        else:
            h = np.where(pre > 0, pre, 0.0)
    return h


def base_forward(
    g: Graph,
    params: ModelParams,
    ops: GraphOperators,
    dropout_rate: float = 0.0,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    dropout_input: bool = False,
    features: Tensor | None = None,
) -> Tensor:
    """Plain base-GNN forward (no debiasing path); returns probabilities."""
    if train_mode and dropout_rate > 0.0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    h = features if features is not None else Tensor(g.features)
    if dropout_input:
        h = dropout(h, dropout_rate, train_mode, rng)
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        pre = base_aggregate(h, ops, layer.omega, params.kind)
        h = _activate(pre, "softmax" if i == last else "relu")
        if i != last:
            h = dropout(h, dropout_rate, train_mode, rng)
    return h
