"""The recommendation model: bottom MLP over dense features, pooled embedding
lookups, pairwise dot-product feature interaction, top MLP, sigmoid output,
binary cross-entropy loss; plus a factorization-machine reference predictor
and an analytic parameter counter.

Weight-gradient reductions over the mini-batch go through the grid-component
scheme in :mod:`dlrmkit.dense`, which is what lets the data-parallel simulator
reproduce serial training bit-for-bit. Forward passes and per-sample backward
sweeps only ever mix values within one sample row.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import dense
from .dense import Matrix, RngStream, matmul, activation, activation_grad
from .embedding import EmbeddingTable, SparseBatch, SparseRowGrad, lookup_batch, lookup_backward

__all__ = [
    "MlpLayer",
    "MlpParams",
    "MlpCache",
    "MlpGrads",
    "FmParams",
    "DlrmConfig",
    "DlrmModel",
    "DlrmCache",
    "DlrmGradients",
    "init_mlp",
    "mlp_forward",
    "mlp_backward",
    "mlp_backward_trace",
    "layer_grad_components",
    "interact",
    "interact_backward",
    "interaction_width",
    "init_model",
    "dlrm_forward",
    "dlrm_backward",
    "bce_loss",
    "bce_from_logits",
    "fm_predict",
    "fm_predict_naive",
    "param_count",
    "embedding_param_count",
    "mlp_param_count",
]


class StageError(RuntimeError):
    """Failure inside a named model stage."""


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(f"stage '{name}': {e}") from e


# ---------------------------------------------------------------------------
# multilayer perceptron

@dataclass
class MlpLayer:
    weight: Matrix          # (n_out, n_in)
    bias: np.ndarray        # (n_out,)
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"layer shapes inconsistent: W {self.weight.shape}, "
                f"b {self.bias.shape}"
            )


@dataclass
class MlpParams:
    layers: list[MlpLayer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError(
                    f"layer dim chain broken: {prev.weight.shape} -> "
                    f"{nxt.weight.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams([
            MlpLayer(l.weight.copy(), l.bias.copy(), l.activation)
            for l in self.layers
        ])


@dataclass
class MlpCache:
    x0: Matrix
    pre: list[Matrix]   # pre-activations z_l
    post: list[Matrix]  # activations a_l

    def layer_input(self, l: int) -> Matrix:
        return self.x0 if l == 0 else self.post[l - 1]


@dataclass
class MlpGrads:
    weights: list[Matrix]
    biases: list[np.ndarray]


def init_mlp(dims: list[int], activations: list[str], stream: RngStream) -> MlpParams:
    """Weights ~ normal(0, sqrt(2/(n_in+n_out))), biases zero."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for l, (n_in, n_out) in enumerate(zip(dims, dims[1:])):
        std = np.sqrt(2.0 / (n_in + n_out))
        w = stream.derive(l).normal(n_out, n_in) * std
        layers.append(MlpLayer(w, np.zeros(n_out), activations[l]))
    return MlpParams(layers)


def mlp_forward(params: MlpParams, x: Matrix) -> tuple[Matrix, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(
            f"input shape {x.shape} does not feed first layer of width "
            f"{params.in_dim}"
        )
    pre, post = [], []
    a = x
    for layer in params.layers:
        z = matmul(a, layer.weight.T) + layer.bias
        a = activation(z, layer.activation)
        pre.append(z)
        post.append(a)
    return a, MlpCache(x, pre, post)


def mlp_backward_trace(params: MlpParams, cache: MlpCache,
                       grad_y: Matrix) -> tuple[list[tuple[Matrix, Matrix]], Matrix]:
    """Per-sample backward sweep.

    Returns per-layer (layer_input, grad_pre_activation) pairs plus the
    gradient w.r.t. the MLP input. No cross-sample mixing happens here; the
    weight/bias reductions are done separately so they can be made
    partition-invariant.
    """
    grad_a = np.asarray(grad_y, dtype=np.float64)
    if grad_a.shape != cache.post[-1].shape:
        raise ValueError(
            f"grad_y shape {grad_a.shape} does not match forward output "
            f"{cache.post[-1].shape}"
        )
    pairs: list[tuple[Matrix, Matrix]] = [None] * len(params.layers)
    for l in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[l]
        gz = grad_a * activation_grad(cache.pre[l], layer.activation)
        pairs[l] = (cache.layer_input(l), gz)
        grad_a = matmul(gz, layer.weight)
    return pairs, grad_a


def layer_grad_components(x_l: Matrix, gz_l: Matrix, x_max, gz_max,
                          n_total: int):
    """Exact reduction components for one layer's (grad_W, grad_b)."""
    w_comps = dense.outer_sum_components(gz_l, x_l, gz_max, x_max, n_total)
    b_comps = dense.col_sum_components(gz_l, gz_max, n_total)
    return w_comps, b_comps


def mlp_backward(params: MlpParams, cache: MlpCache, grad_y: Matrix,
                 n_total: int | None = None) -> tuple[MlpGrads, Matrix]:
    """Exact reverse-mode gradients for every layer, plus grad wrt input.

    ``n_total`` is the full-batch row count the reduction grids are sized
    for; it defaults to the rows in the cache (serial training).
    """
    pairs, grad_x = mlp_backward_trace(params, cache, grad_y)
    if n_total is None:
        n_total = cache.x0.shape[0]
    dws, dbs = [], []
    for x_l, gz_l in pairs:
        x_max = np.abs(x_l).max(axis=0) if x_l.shape[0] else np.zeros(x_l.shape[1])
        g_max = np.abs(gz_l).max(axis=0) if gz_l.shape[0] else np.zeros(gz_l.shape[1])
        w_comps, b_comps = layer_grad_components(x_l, gz_l, x_max, g_max, n_total)
        dws.append(dense.sum_components(w_comps))
        dbs.append(dense.sum_components(b_comps))
    return MlpGrads(dws, dbs), grad_x


# ---------------------------------------------------------------------------
# pairwise dot-product interaction

def interaction_width(sparse_dim: int, num_features: int) -> int:
    return sparse_dim + num_features * (num_features - 1) // 2


def interact(dense_repr: Matrix, emb_outputs: list[Matrix]) -> Matrix:
    """Concat(dense vector, dot(z_i, z_j) for all 0 <= i < j < n_f).

    Feature 0 is the processed dense vector; features 1..n_f-1 are the
    embedding outputs. Pair order is row-major over (i, j) with i < j; no
    self-interactions.
    """
    feats = [np.asarray(dense_repr, dtype=np.float64)] + [
        np.asarray(z, dtype=np.float64) for z in emb_outputs
    ]
    b, d = feats[0].shape
    for k, z in enumerate(feats):
        if z.shape != (b, d):
            raise ValueError(
                f"interaction input {k} has shape {z.shape}, expected {(b, d)}"
            )
    nf = len(feats)
    out = np.empty((b, interaction_width(d, nf)))
    out[:, :d] = feats[0]
    col = d
    for i in range(nf):
        for j in range(i + 1, nf):
            out[:, col] = (feats[i] * feats[j]).sum(axis=1)
            col += 1
    return out


def interact_backward(dense_repr: Matrix, emb_outputs: list[Matrix],
                      grad_out: Matrix) -> tuple[Matrix, list[Matrix]]:
    """Adjoint of interact: grad z_i += sum_j g_ij * z_j, plus the dense slice."""
    feats = [np.asarray(dense_repr, dtype=np.float64)] + [
        np.asarray(z, dtype=np.float64) for z in emb_outputs
    ]
    b, d = feats[0].shape
    nf = len(feats)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (b, interaction_width(d, nf)):
        raise ValueError(
            f"grad_out shape {grad_out.shape}, expected "
            f"{(b, interaction_width(d, nf))}"
        )
    grads = [np.zeros((b, d)) for _ in range(nf)]
    grads[0] += grad_out[:, :d]
    col = d
    for i in range(nf):
        for j in range(i + 1, nf):
            g = grad_out[:, col][:, None]
            grads[i] += g * feats[j]
            grads[j] += g * feats[i]
            col += 1
    return grads[0], grads[1:]


# ---------------------------------------------------------------------------
# model configuration and assembly

@dataclass
class DlrmConfig:
    """Architecture plus seed. bottom_mlp_dims includes the dense input width
    and must end at sparse_dim; top_mlp_dims excludes its (derived) input
    width and must end at 1."""

    embedding_sizes: list[int]
    sparse_dim: int
    bottom_mlp_dims: list[int]
    top_mlp_dims: list[int]
    interaction: str = "dot"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.interaction != "dot":
            raise ValueError(f"unsupported interaction: {self.interaction!r}")
        if self.sparse_dim < 1:
            raise ValueError("sparse_dim must be positive")
        if any(m < 1 for m in self.embedding_sizes):
            raise ValueError("embedding sizes must be positive")
        if len(self.bottom_mlp_dims) < 2:
            raise ValueError("bottom MLP needs an input and at least one layer")
        if self.bottom_mlp_dims[-1] != self.sparse_dim:
            raise ValueError(
                f"bottom MLP output {self.bottom_mlp_dims[-1]} must equal "
                f"sparse feature size {self.sparse_dim}"
            )
        if not self.top_mlp_dims or self.top_mlp_dims[-1] != 1:
            raise ValueError("top MLP must end in a single output unit")

    @property
    def num_tables(self) -> int:
        return len(self.embedding_sizes)

    @property
    def num_features(self) -> int:
        return self.num_tables + 1

    @property
    def dense_dim(self) -> int:
        return self.bottom_mlp_dims[0]

    @property
    def top_in_dim(self) -> int:
        return interaction_width(self.sparse_dim, self.num_features)

    def top_dims_chain(self) -> list[int]:
        return [self.top_in_dim] + list(self.top_mlp_dims)


@dataclass
class DlrmModel:
    config: DlrmConfig
    bottom: MlpParams
    top: MlpParams
    tables: list[EmbeddingTable]

    def copy(self) -> "DlrmModel":
        return DlrmModel(
            self.config,
            self.bottom.copy(),
            self.top.copy(),
            [EmbeddingTable(t.weights.copy(), t.table_id) for t in self.tables],
        )


@dataclass
class DlrmCache:
    dense_x: Matrix
    batches: list[SparseBatch]
    bottom_cache: MlpCache
    emb_outputs: list[Matrix]
    interact_out: Matrix
    top_cache: MlpCache
    prob: np.ndarray


@dataclass
class DlrmGradients:
    bottom: MlpGrads
    top: MlpGrads
    tables: list[SparseRowGrad]


def init_model(config: DlrmConfig) -> DlrmModel:
    root = RngStream(config.seed)
    bottom = init_mlp(list(config.bottom_mlp_dims),
                      ["relu"] * (len(config.bottom_mlp_dims) - 1),
                      root.derive(0))
    top_chain = config.top_dims_chain()
    top_acts = ["relu"] * (len(top_chain) - 2) + ["identity"]
    top = init_mlp(top_chain, top_acts, root.derive(1))
    tables = [
        EmbeddingTable.initialize(m, config.sparse_dim, root.derive(2, t), t)
        for t, m in enumerate(config.embedding_sizes)
    ]
    return DlrmModel(config, bottom, top, tables)


def dlrm_forward(model: DlrmModel, dense_x: Matrix,
                 batches: list[SparseBatch]) -> tuple[np.ndarray, DlrmCache]:
    """prob = sigmoid(top_mlp(interact(bottom_mlp(x), lookups)))."""
    cfg = model.config
    if len(batches) != cfg.num_tables:
        raise ValueError(
            f"got {len(batches)} sparse batches for {cfg.num_tables} tables"
        )
    dense_x = np.asarray(dense_x, dtype=np.float64)
    b = dense_x.shape[0]
    for t, sb in enumerate(batches):
        if sb.num_segments != b:
            raise ValueError(
                f"sparse batch {t} has {sb.num_segments} segments, batch is {b}"
            )
    with _stage("bottom_mlp"):
        dense_repr, bottom_cache = mlp_forward(model.bottom, dense_x)
    with _stage("embedding_lookup"):
        emb_outputs = [lookup_batch(tb, sb)
                       for tb, sb in zip(model.tables, batches)]
    with _stage("interaction"):
        inter = interact(dense_repr, emb_outputs)
    with _stage("top_mlp"):
        logits, top_cache = mlp_forward(model.top, inter)
    prob = activation(logits, "sigmoid")[:, 0]
    return prob, DlrmCache(dense_x, batches, bottom_cache, emb_outputs,
                           inter, top_cache, prob)


def dlrm_backward(model: DlrmModel, cache: DlrmCache,
                  grad_logits: np.ndarray,
                  n_total: int | None = None) -> DlrmGradients:
    """Exact gradients for every parameter from d(loss)/d(logits)."""
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    with _stage("top_mlp_backward"):
        top_grads, grad_inter = mlp_backward(
            model.top, cache.top_cache, grad_logits[:, None], n_total)
    with _stage("interaction_backward"):
        grad_dense_repr, grad_embs = interact_backward(
            cache.bottom_cache.post[-1], cache.emb_outputs, grad_inter)
    with _stage("bottom_mlp_backward"):
        bottom_grads, _ = mlp_backward(
            model.bottom, cache.bottom_cache, grad_dense_repr, n_total)
    with _stage("embedding_backward"):
        table_grads = [
            lookup_backward(tb, sb, g)
            for tb, sb, g in zip(model.tables, cache.batches, grad_embs)
        ]
    return DlrmGradients(bottom_grads, top_grads, table_grads)


# ---------------------------------------------------------------------------
# loss

def bce_loss(prob: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and the gradient w.r.t. pre-sigmoid logits.

    Requires probs strictly inside (0, 1). The logit gradient is
    (p - y) / batch, exact for the sigmoid/BCE composition.
    """
    p = np.asarray(prob, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty batch")
    if p.shape != y.shape:
        raise ValueError(f"prob shape {p.shape} != labels shape {y.shape}")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("probabilities must lie strictly in (0, 1)")
    per = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(per.mean()), (p - y) / p.shape[0]


def bce_from_logits(logits: np.ndarray,
                    labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Overflow-safe BCE evaluated from logits; returns (mean, grad, per-sample).

    Same mathematical value/gradient as bce_loss(sigmoid(z), y); usable even
    where sigmoid saturates to exactly 0 or 1 in float64.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty batch")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = (activation(z[None, :], "sigmoid")[0] - y) / z.shape[0]
    return float(per.mean()), grad, per


# ---------------------------------------------------------------------------
# factorization machine reference predictor

@dataclass
class FmParams:
    """bias b, linear weights w (n,), factor matrix V (n x d)."""

    b: float
    w: np.ndarray
    V: Matrix

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.V.ndim != 2 or self.w.shape != (self.V.shape[0],):
            raise ValueError(
                f"w shape {self.w.shape} does not match V shape {self.V.shape}"
            )


def fm_predict_naive(p: FmParams, x: np.ndarray) -> float:
    """b + w.x + x' upper(V V') x with the interaction matrix materialized."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != p.w.shape:
        raise ValueError(f"x shape {x.shape} != w shape {p.w.shape}")
    upper = np.triu(p.V @ p.V.T, k=1)
    return float(p.b + p.w @ x + x @ upper @ x)


def fm_predict(p: FmParams, x: np.ndarray) -> float:
    """Same value in O(n d): 0.5 * (|V'x|^2 - sum_i x_i^2 |v_i|^2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != p.w.shape:
        raise ValueError(f"x shape {x.shape} != w shape {p.w.shape}")
    vx = p.V.T @ x
    pair = 0.5 * (vx @ vx - (x * x) @ (p.V * p.V).sum(axis=1))
    return float(p.b + p.w @ x + pair)


# ---------------------------------------------------------------------------
# bookkeeping

def embedding_param_count(embedding_sizes: list[int], sparse_dim: int) -> int:
    return sum(m * sparse_dim for m in embedding_sizes)


def mlp_param_count(dims: list[int]) -> int:
    """Weights plus biases along a dim chain [n_0, n_1, ..., n_k]."""
    return sum(n_out * n_in + n_out for n_in, n_out in zip(dims, dims[1:]))


def param_count(config: DlrmConfig) -> int:
    """Total trainable parameters, computed from dimensions alone."""
    return (embedding_param_count(config.embedding_sizes, config.sparse_dim)
            + mlp_param_count(list(config.bottom_mlp_dims))
            + mlp_param_count(config.top_dims_chain()))
