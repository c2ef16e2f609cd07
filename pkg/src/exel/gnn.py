"""Minimal deterministic GNN: GCN/GIN/SAGE stacks, readout, softmax head.

Everything is batched over graphs of equal size: operators have shape
``(B, n, n)`` and activations ``(B, n, f)``, so a single graph is just
``B = 1``. Gradients are written out by hand.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteLoss
from .graph import Dataset, Graph, mean_neighbor_operator, normalized_adjacency
from .rng import Xoshiro256

LAYER_KINDS = ("gcn", "gin", "sage")
READOUTS = ("mean", "sum", "max")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    gin_eps: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")

    def param_shapes(self) -> dict[str, tuple]:
        i, o = self.in_dim, self.out_dim
        if self.kind == "gcn":
            return {"W": (i, o), "b": (o,)}
        if self.kind == "sage":
            return {"W": (2 * i, o), "b": (o,)}
        return {"W1": (i, o), "b1": (o,), "W2": (o, o), "b2": (o,)}


@dataclass
class ModelParams:
    layers: list
    weights: list  # one dict of arrays per layer
    W_out: np.ndarray
    b_out: np.ndarray
    readout: str = "mean"

    def __post_init__(self):
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout {self.readout!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch("layer dimensions do not chain")
        if self.W_out.shape[0] != self.layers[-1].out_dim:
            raise DimensionMismatch("output head rows must equal embedding width")
        for spec, w in zip(self.layers, self.weights):
            for name, shape in spec.param_shapes().items():
                if w[name].shape != shape:
                    raise DimensionMismatch(f"{spec.kind} parameter {name} has shape "
                                            f"{w[name].shape}, expected {shape}")

    @property
    def embedding_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_classes(self) -> int:
        return self.W_out.shape[1]

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def named_arrays(self):
        """``(name, array)`` pairs in a fixed order (also the init order)."""
        for k, (spec, w) in enumerate(zip(self.layers, self.weights)):
            for name in spec.param_shapes():
                yield f"layers.{k}.{name}", w[name]
        yield "W_out", self.W_out
        yield "b_out", self.b_out

    def zeros_like(self) -> "ModelParams":
        out = self.copy()
        for _, arr in out.named_arrays():
            arr[...] = 0.0
        return out

    def equals(self, other: "ModelParams") -> bool:
        if self.layers != other.layers or self.readout != other.readout:
            return False
        return all(
            na == nb and np.array_equal(a, b)
            for (na, a), (nb, b) in zip(self.named_arrays(), other.named_arrays())
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.5
    seed: int = 0
    init_scale: float = 0.3

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")


def build_specs(kind: str, in_dim: int, dims: Sequence[int], gin_eps: float = 0.0):
    specs = []
    prev = in_dim
    for width in dims:
        specs.append(LayerSpec(kind, prev, int(width), gin_eps))
        prev = int(width)
    return specs


def init_model(specs, num_classes: int, readout: str = "mean", seed: int = 0,
               init_scale: float = 0.3) -> ModelParams:
    """Uniform ``[-init_scale, init_scale]`` initialization from the seeded stream."""
    rng = Xoshiro256(seed)
    weights = []
    for spec in specs:
        w = {}
        for name, shape in spec.param_shapes().items():
            w[name] = rng.uniform_array(shape, -init_scale, init_scale)
        weights.append(w)
    d = specs[-1].out_dim
    W_out = rng.uniform_array((d, num_classes), -init_scale, init_scale)
    b_out = rng.uniform_array((num_classes,), -init_scale, init_scale)
    return ModelParams(list(specs), weights, W_out, b_out, readout)


# ---------------------------------------------------------------- operators


@dataclass
class GraphBatch:
    """Stacked operators and features for graphs sharing a node count."""

    X: np.ndarray
    norm_adj: np.ndarray
    adj: np.ndarray
    mean_nbr: np.ndarray
    index: list = field(default_factory=list)  # positions in the source list

    @property
    def size(self) -> int:
        return self.X.shape[0]


def make_batch(graphs: Sequence[Graph], index=None) -> GraphBatch:
    ns = {g.n for g in graphs}
    if len(ns) != 1:
        raise DimensionMismatch("a batch needs graphs of equal size")
    return GraphBatch(
        X=np.stack([g.features for g in graphs]),
        norm_adj=np.stack([normalized_adjacency(g) for g in graphs]),
        adj=np.stack([g.adjacency for g in graphs]),
        mean_nbr=np.stack([mean_neighbor_operator(g) for g in graphs]),
        index=list(index) if index is not None else list(range(len(graphs))),
    )


def batches_by_size(graphs: Sequence[Graph]) -> list[GraphBatch]:
    """Group graphs by node count, in increasing size, stable within a size."""
    buckets: dict[int, list[int]] = {}
    for k, g in enumerate(graphs):
        buckets.setdefault(g.n, []).append(k)
    return [make_batch([graphs[k] for k in idx], idx) for _, idx in sorted(buckets.items())]


# ---------------------------------------------------------------- layers


def _dense(X, W):
    # one BLAS call instead of a stacked matmul
    return (X.reshape(-1, X.shape[-1]) @ W).reshape(X.shape[:-1] + (W.shape[1],))


def _relu(x):
    return np.maximum(x, 0.0)


def _layer_forward(spec: LayerSpec, w, H, batch: GraphBatch):
    if H.shape[-1] != spec.in_dim:
        raise DimensionMismatch(
            f"{spec.kind} layer expects {spec.in_dim} input features, got {H.shape[-1]}"
        )
    if spec.kind == "gcn":
        S = batch.norm_adj @ H
        Z = _dense(S, w["W"]) + w["b"]
        return _relu(Z), (H, S, Z)
    if spec.kind == "sage":
        S = np.concatenate([H, batch.mean_nbr @ H], axis=-1)
        Z = _dense(S, w["W"]) + w["b"]
        return _relu(Z), (H, S, Z)
    S = (1.0 + spec.gin_eps) * H + batch.adj @ H
    Z1 = _dense(S, w["W1"]) + w["b1"]
    R = _relu(Z1)
    Z2 = _dense(R, w["W2"]) + w["b2"]
    return _relu(Z2), (H, S, Z1, R, Z2)


def _wgrad(S, dZ):
    return S.reshape(-1, S.shape[-1]).T @ dZ.reshape(-1, dZ.shape[-1])


def _tr(m):
    return np.swapaxes(m, -1, -2)


def _layer_backward(spec: LayerSpec, w, cache, dOut, batch: GraphBatch):
    grads = {}
    if spec.kind in ("gcn", "sage"):
        H, S, Z = cache
        dZ = dOut * (Z > 0)
        grads["W"] = _wgrad(S, dZ)
        grads["b"] = dZ.sum(axis=(0, 1))
        dS = _dense(dZ, w["W"].T)
        if spec.kind == "gcn":
            dH = _tr(batch.norm_adj) @ dS
        else:
            f = spec.in_dim
            dH = dS[..., :f] + _tr(batch.mean_nbr) @ dS[..., f:]
        return dH, grads
    H, S, Z1, R, Z2 = cache
    dZ2 = dOut * (Z2 > 0)
    grads["W2"] = _wgrad(R, dZ2)
    grads["b2"] = dZ2.sum(axis=(0, 1))
    dZ1 = _dense(dZ2, w["W2"].T) * (Z1 > 0)
    grads["W1"] = _wgrad(S, dZ1)
    grads["b1"] = dZ1.sum(axis=(0, 1))
    dS = _dense(dZ1, w["W1"].T)
    dH = (1.0 + spec.gin_eps) * dS + _tr(batch.adj) @ dS
    return dH, grads


def layer_forward(spec: LayerSpec, w, H, graph: Graph) -> np.ndarray:
    """Apply one layer to a single graph's ``n x in_dim`` activations."""
    out, _ = _layer_forward(spec, w, np.asarray(H, dtype=np.float64)[None], make_batch([graph]))
    return out[0]


def readout(H, kind: str) -> np.ndarray:
    """Column-wise mean/sum/max over the node axis (second to last)."""
    H = np.asarray(H, dtype=np.float64)
    if kind == "mean":
        return H.mean(axis=-2)
    if kind == "sum":
        return H.sum(axis=-2)
    if kind == "max":
        return H.max(axis=-2)
    raise ValueError(f"unknown readout {kind!r}")


def _readout_backward(H, kind, dz):
    n = H.shape[-2]
    if kind == "mean":
        return np.repeat(dz[:, None, :] / n, n, axis=1)
    if kind == "sum":
        return np.repeat(dz[:, None, :], n, axis=1)
    # argmax picks the lowest row index among ties
    arg = H.argmax(axis=1)
    dH = np.zeros_like(H)
    b_idx, c_idx = np.meshgrid(np.arange(H.shape[0]), np.arange(H.shape[2]), indexing="ij")
    dH[b_idx, arg, c_idx] = dz
    return dH


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    return logz - shifted[np.arange(len(labels)), labels]


# ---------------------------------------------------------------- model


@dataclass
class ForwardResult:
    H: np.ndarray
    z: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _forward_batch(model: ModelParams, batch: GraphBatch, X=None):
    H = batch.X if X is None else X
    caches = []
    for spec, w in zip(model.layers, model.weights):
        H, cache = _layer_forward(spec, w, H, batch)
        caches.append(cache)
    z = readout(H, model.readout)
    logits = z @ model.W_out + model.b_out
    return H, z, logits, caches


def forward(model: ModelParams, graph: Graph) -> ForwardResult:
    H, z, logits, _ = _forward_batch(model, make_batch([graph]))
    return ForwardResult(H[0], z[0], logits[0], softmax(logits[0]))


def _backward_batch(model, batch, H, z, logits, caches, labels, weight):
    """Gradients of ``weight * sum_b CE_b``; returns ``(grads, dX, dH)``."""
    p = softmax(logits)
    dlogits = p.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits *= weight
    grads = model.zeros_like()
    grads.W_out[...] = z.T @ dlogits
    grads.b_out[...] = dlogits.sum(axis=0)
    dz = dlogits @ model.W_out.T
    dH_final = _readout_backward(H, model.readout, dz)
    dH = dH_final
    for k in range(len(model.layers) - 1, -1, -1):
        dH, g = _layer_backward(model.layers[k], model.weights[k], caches[k], dH, batch)
        for name, val in g.items():
            grads.weights[k][name][...] = val
    return grads, dH, dH_final


@dataclass
class LossGradients:
    loss: float
    grads: ModelParams
    dX: np.ndarray
    dH: np.ndarray


def loss_and_gradients(model: ModelParams, graph: Graph, label: Optional[int] = None) -> LossGradients:
    label = graph.label if label is None else label
    if label is None:
        raise ValueError("graph is unlabeled")
    batch = make_batch([graph])
    H, z, logits, caches = _forward_batch(model, batch)
    labels = np.array([label])
    loss = float(cross_entropy(logits, labels)[0])
    grads, dX, dH = _backward_batch(model, batch, H, z, logits, caches, labels, 1.0)
    return LossGradients(loss, grads, dX[0], dH[0])


def predict(model: ModelParams, graphs: Sequence[Graph], batches=None) -> np.ndarray:
    """Argmax class per graph, in input order."""
    out = np.zeros(len(graphs), dtype=np.int64)
    for batch in batches if batches is not None else batches_by_size(graphs):
        _, _, logits, _ = _forward_batch(model, batch)
        out[batch.index] = logits.argmax(axis=1)
    return out


def accuracy(model: ModelParams, graphs: Sequence[Graph]) -> float:
    labels = np.array([g.label for g in graphs])
    return float(np.mean(predict(model, graphs) == labels))


def dataset_loss_and_gradients(model: ModelParams, graphs: Sequence[Graph], batches=None):
    """Mean cross-entropy over ``graphs`` and its parameter gradient."""
    batches = batches if batches is not None else batches_by_size(graphs)
    total = 0.0
    N = len(graphs)
    acc = model.zeros_like()
    for batch in batches:
        labels = np.array([graphs[k].label for k in batch.index])
        H, z, logits, caches = _forward_batch(model, batch)
        total += float(cross_entropy(logits, labels).sum())
        g, _, _ = _backward_batch(model, batch, H, z, logits, caches, labels, 1.0 / N)
        for (_, a), (_, b) in zip(acc.named_arrays(), g.named_arrays()):
            a += b
    return total / N, acc


def train(model: ModelParams, graphs, config: TrainConfig):
    """Full-batch gradient descent; returns ``(trained_model, loss_trace)``.

    ``loss_trace[k]`` is the mean loss evaluated before update ``k``, so
    ``epochs`` updates produce ``epochs`` entries.
    """
    if isinstance(graphs, Dataset):
        graphs = graphs.graphs
    graphs = list(graphs)
    if any(g.label is None for g in graphs):
        raise ValueError("all training graphs need labels")
    model = model.copy()
    batches = batches_by_size(graphs)
    trace = []
    for epoch in range(config.epochs):
        loss, grads = dataset_loss_and_gradients(model, graphs, batches)
        trace.append(loss)
        if not np.isfinite(loss):
            raise NonFiniteLoss(epoch, trace)
        for (_, p), (_, g) in zip(model.named_arrays(), grads.named_arrays()):
            p -= config.learning_rate * g
    return model, trace


# ---------------------------------------------------------------- diagnostics


def gradient_check(model: ModelParams, graph: Graph, label=None, step: float = 1e-5,
                   analytic: Optional[LossGradients] = None) -> float:
    """Max relative error of analytic gradients against central differences.

    Relative error is measured per tensor, ``max|a - n| / max(max|a|, max|n|)``,
    over every parameter tensor and the input features.
    """
    label = graph.label if label is None else label
    ana = analytic or loss_and_gradients(model, graph, label)
    work = model.copy()
    worst = 0.0

    def loss_of(m, g):
        return loss_and_gradients(m, g, label).loss

    for (name, arr), (_, garr) in zip(work.named_arrays(), ana.grads.named_arrays()):
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_of(work, graph)
            flat[i] = orig - step
            lm = loss_of(work, graph)
            flat[i] = orig
            num.reshape(-1)[i] = (lp - lm) / (2 * step)
        worst = max(worst, _rel_err(garr, num))
    X = graph.features.copy()
    num = np.zeros_like(X)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            Xp = X.copy()
            Xp[i, j] += step
            Xm = X.copy()
            Xm[i, j] -= step
            num[i, j] = (loss_of(model, graph.replace(features=Xp))
                         - loss_of(model, graph.replace(features=Xm))) / (2 * step)
    return max(worst, _rel_err(ana.dX, num))


def _rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)


@dataclass
class LipschitzReport:
    max_ratio: float  # max of |dL| / (K ||dz||)
    bound: float  # K
    pairs: int


def loss_from_embedding(model: ModelParams, z, label: int) -> float:
    logits = np.asarray(z) @ model.W_out + model.b_out
    return float(cross_entropy(logits[None], np.array([label]))[0])


def lipschitz_check(model: ModelParams, pairs: int = 1000, seed: int = 0,
                    scale: float = 1.0) -> LipschitzReport:
    """Empirical check that cross-entropy through the head is
    ``sqrt(2) * sigma_max(W_out)``-Lipschitz in the graph embedding."""
    from .solver import spectral_norm

    K = np.sqrt(2.0) * spectral_norm(model.W_out, iters=100, seed=seed)
    rng = Xoshiro256(seed)
    d, C = model.W_out.shape
    worst = 0.0
    for _ in range(pairs):
        z1 = np.array([scale * rng.normal() for _ in range(d)])
        z2 = np.array([scale * rng.normal() for _ in range(d)])
        y = rng.below(C)
        diff = abs(loss_from_embedding(model, z1, y) - loss_from_embedding(model, z2, y))
        gap = np.linalg.norm(z1 - z2)
        if diff == 0.0:
            continue
        ratio = diff / (K * gap) if K * gap > 0 else float("inf")
        worst = max(worst, ratio)
    return LipschitzReport(worst, float(K), pairs)


def saliency(model: ModelParams, graph: Graph) -> np.ndarray:
    """Per-node L2 norm of the loss gradient w.r.t. input features.

    Unlabeled graphs use the predicted class as the target.
    """
    label = graph.label
    if label is None:
        label = int(forward(model, graph).logits.argmax())
    return np.linalg.norm(loss_and_gradients(model, graph, label).dX, axis=1)


def embed(model: ModelParams, graph: Graph):
    """Final-layer node embeddings and the readout vector."""
    res = forward(model, graph)
    return res.H, res.z
