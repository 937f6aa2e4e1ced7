"""Representation learning: graph convolution block and segment pooling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DimensionError
from .numcore import Param, Tensor
from .structure import Partition

DEGREE_EPS = 1e-12


@dataclass
class GraphConvParams:
    wz1: Param  # propagation weight
    wz2: Param  # position-wise feed-forward weight
    bz: Param
    ln1_gain: Param
    ln1_bias: Param
    ln2_gain: Param
    ln2_bias: Param

    def params(self) -> list[Param]:
        return [self.wz1, self.wz2, self.bz, self.ln1_gain, self.ln1_bias, self.ln2_gain, self.ln2_bias]


def rw_normalize(a) -> Tensor:
    """Divide each row by its degree; zero-degree rows become the matching basis row."""
    a = nc.as_tensor(a)
    av = a.value
    if av.shape[0] != av.shape[1]:
        raise DimensionError(f"adjacency must be square, got {av.shape}")
    deg = av.sum(axis=1, keepdims=True)
    live = deg >= DEGREE_EPS
    safe = np.where(live, deg, 1.0)
    out = np.where(live, av / safe, np.eye(av.shape[0]))

    def backward(g):
        # d(a_ij / d_i) = (g_ij - sum_k g_ik out_ik) / d_i; fallback rows are constant
        inner = (g * out).sum(axis=1, keepdims=True)
        return (np.where(live, (g - inner) / safe, 0.0),)

    return nc.make_node(out, (a,), backward)


def propagate(x, a_ref, p: GraphConvParams, eps: float = 1e-5) -> Tensor:
    """First sublayer: ``LN(ReLU(D⁻¹ Â x W) + x)``."""
    x, a_ref = nc.as_tensor(x), nc.as_tensor(a_ref)
    if a_ref.shape != (x.shape[0], x.shape[0]):
        raise DimensionError(f"adjacency {a_ref.shape} does not match {x.shape[0]} nodes")
    msg = nc.matmul(nc.matmul(rw_normalize(a_ref), x), p.wz1)
    return nc.layer_norm(nc.add(nc.relu(msg), x), p.ln1_gain, p.ln1_bias, eps)


def feed_forward(z, p: GraphConvParams, eps: float = 1e-5) -> Tensor:
    """Second sublayer, applied per row: ``LN(ReLU(z W + b) + z)``."""
    z = nc.as_tensor(z)
    return nc.layer_norm(nc.add(nc.relu(nc.affine(z, p.wz2, p.bz)), z), p.ln2_gain, p.ln2_bias, eps)


def graph_conv_block(x, a_ref, p: GraphConvParams, eps: float = 1e-5) -> Tensor:
    return feed_forward(propagate(x, a_ref, p, eps), p, eps)


def segment_pool(z, p: Partition) -> Tensor:
    """Mean of the rows in each segment; one output row per segment."""
    z = nc.as_tensor(z)
    if p.n != z.shape[0]:
        raise DimensionError(f"partition covers {p.n} rows, input has {z.shape[0]}")
    return nc.matmul(p.pooling_matrix(), z)
