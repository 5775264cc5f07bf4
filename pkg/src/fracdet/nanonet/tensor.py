"""Minimal reverse-mode autodiff over float64 NumPy buffers.

A Tensor wraps a dense array plus an optional gradient buffer of the same
shape. Operations record their parents and a backward closure; calling
:func:`backward_from` (or ``Tensor.backward`` on a scalar) walks the tape
in reverse topological order and accumulates gradients into every
reachable tensor with ``requires_grad``.

Only the operations the detector needs are provided; all of them are
deterministic functions of their inputs, and the convolution / pooling
hot paths dispatch to the selected kernel backend.
"""

from __future__ import annotations

import numpy as np

from ..errors import StructuralError
from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad and self._backward_fn is None:
            return  # constant leaf: gradients are not wanted
        if g.shape != self.data.shape:
            raise StructuralError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise StructuralError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        backward_from([(self, np.asarray(grad, dtype=np.float64))])


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def backward_from(pairs) -> None:
    """Seed output gradients and run one reverse pass over the joint tape.

    Args:
        pairs: iterable of (tensor, gradient array) roots. Gradients flow
            to every tensor reachable from any root.
    """
    pairs = list(pairs)
    topo: list[Tensor] = []
    state: dict[int, int] = {}  # id -> 0 visiting, 1 done
    for root, _ in pairs:
        stack = [(root, False)]
        while stack:
            t, processed = stack.pop()
            if processed:
                state[id(t)] = 1
                topo.append(t)
                continue
            if state.get(id(t)) is not None:
                continue
            state[id(t)] = 0
            stack.append((t, True))
            for p in t._parents:
                if state.get(id(p)) is None:
                    stack.append((p, False))
    for t, g in pairs:
        t.accumulate(np.asarray(g, dtype=np.float64))
    for t in reversed(topo):
        if t._backward_fn is not None and t.grad is not None:
            t._backward_fn(t.grad)


# ---------------------------------------------------------------------------
# operations


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise StructuralError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(g):
        a.accumulate(g)
        b.accumulate(g)

    return _node(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise StructuralError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        x.accumulate(g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape

    def bw(g):
        x.accumulate(g.reshape(orig))

    return _node(x.data.reshape(shape), (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def bw(g):
        x.accumulate(np.ascontiguousarray(g.transpose(inverse)))

    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,), bw)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map rows: (n, din) @ (dout, din)^T + (dout,)."""

    def bw(g):
        x.accumulate(g @ w.data)
        w.accumulate(g.T @ x.data)
        b.accumulate(g.sum(axis=0))

    return _node(x.data @ w.data.T + b.data, (x, w, b), bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        x.accumulate(p * (g - inner))

    return _node(p, (x,), bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    out = kernels.conv2d_forward(x.data, w.data, b.data, stride, pad)

    def bw(g):
        dx, dw, db = kernels.conv2d_backward(x.data, w.data,
                                             np.ascontiguousarray(g), stride, pad)
        x.accumulate(dx)
        w.accumulate(dw)
        b.accumulate(db)

    return _node(out, (x, w, b), bw)


def maxpool2x2(x: Tensor) -> Tensor:
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise StructuralError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    out, argmax = kernels.maxpool2x2_forward(x.data)

    def bw(g):
        x.accumulate(kernels.maxpool2x2_backward(g, argmax, h, w))

    return _node(out, (x,), bw)


def roi_pool_multi(features: Tensor, bin_ranges) -> Tensor:
    """Pool many regions into fixed grids in one node.

    Args:
        features: (C, H, W) feature map.
        bin_ranges: list of (ys, ye, xs, xe) int64 arrays, one per region,
            as produced by the network's bin arithmetic.
    Returns:
        (R, C, G, G) tensor; gradient scatters to argmax cells only.
    """
    c, h, w = features.data.shape
    outs, argmaxes = [], []
    for ys, ye, xs, xe in bin_ranges:
        o, a = kernels.roi_pool_forward(features.data, ys, ye, xs, xe)
        outs.append(o)
        argmaxes.append(a)
    g_dim = bin_ranges[0][0].shape[0] if bin_ranges else 0
    stacked = (np.stack(outs) if outs
               else np.zeros((0, c, g_dim, g_dim)))

    def bw(g):
        dfeat = np.zeros((c, h, w))
        for r, a in enumerate(argmaxes):
            dfeat += kernels.roi_pool_backward(np.ascontiguousarray(g[r]), a, h, w)
        features.accumulate(dfeat)

    return _node(stacked, (features,), bw)


def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        x.accumulate(np.full_like(x.data, np.asarray(g).reshape(-1)[0]))

    return _node(np.array(x.data.sum()), (x,), bw)
