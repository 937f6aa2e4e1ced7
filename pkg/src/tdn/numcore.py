"""Dense float64 matrices with a small reverse-mode autodiff engine.

Every value is a 2-D ``numpy`` array wrapped in a :class:`Tensor`. Ops build a
DAG of tensors; :func:`backward` walks it once in reverse topological order and
accumulates gradients into the reachable :class:`Param` leaves. Only the op set
the TDN model needs is provided.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DTYPE = np.float64


class Tensor:
    """A 2-D float64 value, optionally tracked for differentiation."""

    __slots__ = ("value", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        arr = np.array(value, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.size == 0:
            raise DimensionError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
        self.value: np.ndarray = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Param(Tensor):
    """A trainable leaf. ``grad`` accumulates across backward passes until reset."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(value: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Record an op result. ``backward_fn(g)`` returns one gradient per parent (or None)."""
    out = Tensor.__new__(Tensor)
    out.value = value
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward_fn if out.requires_grad else None
    return out


def zero_grad(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        return g @ bv.T, av.T @ g

    return make_node(av @ bv, (a, b), backward)


def gram(f) -> Tensor:
    """``F Fᵀ``, symmetrized so the result is exactly symmetric."""
    f = as_tensor(f)
    fv = f.value
    g0 = fv @ fv.T
    out = 0.5 * (g0 + g0.T)

    def backward(g):
        return ((g + g.T) @ fv,)

    return make_node(out, (f,), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_node(a.value + b.value, (a, b), lambda g: (g, g))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.value * c, (a,), lambda g: (g * c,))


def mask(a, m: np.ndarray) -> Tensor:
    """Elementwise product with a constant 0/1 mask."""
    a = as_tensor(a)
    m = np.asarray(m, dtype=DTYPE)
    if m.shape != a.shape:
        raise DimensionError(f"mask: mask {m.shape} does not match {a.shape}")
    return make_node(a.value * m, (a,), lambda g: (g * m,))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return make_node(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def affine(x, w, b) -> Tensor:
    """Row-wise ``x W + b`` with ``b`` a 1 x cols bias broadcast over rows."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {w.shape}")
    if b.shape != (1, w.shape[1]):
        raise DimensionError(f"affine: bias {b.shape} does not match weight {w.shape}")
    xv, wv = x.value, w.value

    def backward(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0, keepdims=True)

    return make_node(xv @ wv + b.value, (x, w, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.value > 0
    # subgradient at exactly 0 is 0
    return make_node(np.where(on, x.value, 0.0), (x,), lambda g: (g * on,))


def stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = stable_sigmoid(x.value)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with population variance, then ``gain * v + bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    cols = x.shape[1]
    if gain.shape != (1, cols) or bias.shape != (1, cols):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be (1, {cols})"
        )
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    xv = x.value
    mu = xv.mean(axis=1, keepdims=True)
    centered = xv - mu
    var = (centered**2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gv = gain.value

    def backward(g):
        dxhat = g * gv
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return make_node(xhat * gv + bias.value, (x, gain, bias), backward)


def normalize_rows(x, eps: float = 1e-5) -> np.ndarray:
    """The pre-affine part of :func:`layer_norm` on plain arrays."""
    xv = np.asarray(x, dtype=DTYPE)
    centered = xv - xv.mean(axis=1, keepdims=True)
    return centered / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Param, then drop the graph."""
    if not isinstance(loss, Tensor) or loss.shape != (1, 1):
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"backward needs a 1x1 loss, got {shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    for node in order:
        if not isinstance(node, Param):
            node._parents = ()
            node._backward = None


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Param], state: AdamState) -> None:
    """One bias-corrected Adam update; zeroes the gradients afterwards."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        if m.shape != p.value.shape:
            raise DimensionError(f"adam: moment shape {m.shape} != param {p.name} {p.shape}")
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference oracle


def finite_diff_check(build: Callable[[], Tensor], params: Sequence[Param], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``build`` must rebuild the loss from the current parameter values on every
    call. Inputs sitting exactly on a ReLU kink should be nudged off it by the
    caller beforehand; the one-sided slopes differ there.
    On return each param's ``grad`` holds the analytic gradient.
    """
    if step <= 0:
        raise ContractError("finite_diff_check: step must be positive")
    zero_grad(params)
    backward(build())
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = build().item()
            flat[i] = orig - step
            down = build().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(analytic[i] - numeric) / max(1e-12, abs(analytic[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
