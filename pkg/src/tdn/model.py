"""The stacked TDN: structure + representation layers, classifier, loss, training."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numcore as nc
from .errors import ContractError, DataError, DimensionError, InvariantError
from .metrics import gap, predict_topk
from .numcore import AdamState, Param, Tensor
from .representation import GraphConvParams, graph_conv_block, segment_pool
from .structure import (
    KernelParams,
    Partition,
    kernel_adjacency,
    recursive_partition,
    refine_adjacency,
    target_subgraph_count,
)


@dataclass
class TDNConfig:
    feature_dim: int
    num_classes: int
    num_layers: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ln_eps: float = 1e-5
    seed: int = 0
    batch_size: int = 8
    epochs: int = 20
    topk: int = 20
    kernel_init: str = "uniform"  # or "identity"

    def __post_init__(self):
        if self.feature_dim < 1 or self.num_classes < 1 or self.num_layers < 1:
            raise ContractError(
                f"feature_dim, num_classes and num_layers must be >= 1: {self.feature_dim}, "
                f"{self.num_classes}, {self.num_layers}"
            )
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.kernel_init not in ("uniform", "identity"):
            raise ContractError(f"unknown kernel_init {self.kernel_init!r}")


@dataclass
class TDNLayer:
    kernel: KernelParams
    conv: GraphConvParams

    def params(self) -> list[Param]:
        return self.kernel.params() + self.conv.params()


@dataclass
class TDNModel:
    config: TDNConfig
    layers: list[TDNLayer]
    cls_w: Param  # m x C
    cls_b: Param  # 1 x C

    def params(self) -> list[Param]:
        out = [p for layer in self.layers for p in layer.params()]
        return out + [self.cls_w, self.cls_b]

    def zero_grad(self) -> None:
        nc.zero_grad(self.params())


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: TDNConfig) -> TDNModel:
    """Seeded initialization: uniform(±1/sqrt(fan_in)) weights, zero biases, unit LN gains."""
    m, c = config.feature_dim, config.num_classes
    rng = np.random.default_rng(config.seed)
    layers = []
    for i in range(config.num_layers):
        pre = f"layers.{i}"
        wf = np.eye(m) if config.kernel_init == "identity" else _uniform(rng, m, (m, m))
        kernel = KernelParams(Param(wf, f"{pre}.kernel.wf"), Param(np.zeros((1, m)), f"{pre}.kernel.bf"))
        conv = GraphConvParams(
            wz1=Param(_uniform(rng, m, (m, m)), f"{pre}.conv.wz1"),
            wz2=Param(_uniform(rng, m, (m, m)), f"{pre}.conv.wz2"),
            bz=Param(np.zeros((1, m)), f"{pre}.conv.bz"),
            ln1_gain=Param(np.ones((1, m)), f"{pre}.conv.ln1_gain"),
            ln1_bias=Param(np.zeros((1, m)), f"{pre}.conv.ln1_bias"),
            ln2_gain=Param(np.ones((1, m)), f"{pre}.conv.ln2_gain"),
            ln2_bias=Param(np.zeros((1, m)), f"{pre}.conv.ln2_bias"),
        )
        layers.append(TDNLayer(kernel, conv))
    cls_w = Param(_uniform(rng, m, (m, c)), "classifier.w")
    cls_b = Param(np.zeros((1, c)), "classifier.b")
    return TDNModel(config, layers, cls_w, cls_b)


@dataclass
class LayerTrace:
    adjacency: Tensor  # before refinement
    refined: Tensor
    partition: Partition


@dataclass
class ForwardTrace:
    layers: list[LayerTrace]
    h: Tensor  # 1 x m
    logits: Tensor  # 1 x C

    @property
    def node_counts(self) -> list[int]:
        return [t.partition.n for t in self.layers] + [1]


def forward(x, model: TDNModel, partitions: Sequence[Partition] | None = None) -> ForwardTrace:
    """Run every layer; ``partitions`` freezes the cut decisions (used by gradient checks)."""
    x = nc.as_tensor(x)
    m = model.config.feature_dim
    if x.shape[1] != m:
        raise DimensionError(f"features have width {x.shape[1]}, model expects {m}")
    if partitions is not None and len(partitions) != len(model.layers):
        raise ContractError(f"{len(partitions)} frozen partitions for {len(model.layers)} layers")
    eps = model.config.ln_eps
    traces = []
    for i, layer in enumerate(model.layers):
        a_hat = kernel_adjacency(x, layer.kernel)
        if partitions is None:
            part = recursive_partition(a_hat.value, target_subgraph_count(x.shape[0]))
        else:
            part = partitions[i]
        a_ref = refine_adjacency(a_hat, part)
        z = graph_conv_block(x, a_ref, layer.conv, eps)
        x = segment_pool(z, part)
        traces.append(LayerTrace(a_hat, a_ref, part))
    h = x if x.shape[0] == 1 else segment_pool(x, Partition.whole(x.shape[0]))
    logits = nc.affine(h, model.cls_w, model.cls_b)
    if h.shape != (1, m):
        raise InvariantError(f"video representation has shape {h.shape}")
    return ForwardTrace(traces, h, logits)


def label_vector(labels: Iterable[int], num_classes: int) -> np.ndarray:
    y = np.zeros((1, num_classes))
    for c in labels:
        if not 0 <= c < num_classes:
            raise DataError(f"label {c} outside [0, {num_classes})")
        y[0, c] = 1.0
    return y


def bce_loss(logits, labels: Iterable[int]) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against the label indicator."""
    logits = nc.as_tensor(logits)
    c = logits.shape[1]
    y = label_vector(labels, c)
    z = logits.value
    # max(z, 0) - z y + log(1 + exp(-|z|))
    per_class = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    s = nc.stable_sigmoid(z)

    def backward(g):
        return (g * (s - y) / c,)

    return nc.make_node(np.array([[per_class.mean()]]), (logits,), backward)


def scores(trace: ForwardTrace) -> np.ndarray:
    return nc.stable_sigmoid(trace.logits.value).reshape(-1)


def evaluate_gap(model: TDNModel, videos: Sequence, topk: int | None = None) -> float:
    """GAP over ``videos`` (objects with ``features`` and ``labels``), canonical order."""
    c = model.config.num_classes
    k = min(topk or model.config.topk, c)
    preds = [predict_topk(scores(forward(v.features, model)), k) for v in videos]
    return gap(preds, [v.labels for v in videos])


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_gap: float | None

    def line(self) -> str:
        g = "-" if self.val_gap is None else f"{self.val_gap:.6f}"
        return f"epoch {self.epoch} loss {self.train_loss:.6f} val_gap {g}"


@dataclass
class TrainResult:
    model: TDNModel
    history: list[EpochLog] = field(default_factory=list)


def train(train_set: Sequence, config: TDNConfig, val_set: Sequence = (),
          on_epoch: Callable[[EpochLog], None] | None = None,
          model: TDNModel | None = None) -> TrainResult:
    """Adam training with per-video forward passes and gradient accumulation.

    Each step averages the loss gradient over ``config.batch_size`` videos.
    Video order is reshuffled per epoch from ``config.seed``.
    """
    if len(train_set) == 0:
        raise DataError("training set is empty")
    for v in train_set:
        if v.features.shape[1] != config.feature_dim:
            raise DataError(f"video {v.id} has width {v.features.shape[1]}, expected {config.feature_dim}")
        label_vector(v.labels, config.num_classes)
    model = model or init_model(config)
    params = model.params()
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    rng = np.random.default_rng(config.seed + 1)
    result = TrainResult(model)
    model.zero_grad()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = np.zeros(len(train_set))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            for idx in batch:
                v = train_set[idx]
                loss = bce_loss(forward(v.features, model).logits, v.labels)
                losses[idx] = loss.item()
                nc.backward(nc.scale(loss, 1.0 / len(batch)))
            nc.adam_step(params, state)
        val = evaluate_gap(model, val_set, config.topk) if len(val_set) else None
        # summed in dataset order so the value does not depend on the shuffle
        log = EpochLog(epoch, float(losses.mean()), val)
        result.history.append(log)
        if on_epoch is not None:
            on_epoch(log)
    return result
