"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the primitives the CAM classifier needs are provided: same-padded
stride-1 convolution, global average pooling, ReLU, sigmoid, softplus and a
little elementwise arithmetic. Every primitive accepts an optional leading
batch axis so training can run on mini-batches.

Gradients accumulate additively into ``Tensor.grad`` on leaf tensors; call
``zero_grad`` between steps.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, UsageError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable recording; ops inside return constant tensors."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@dataclass(eq=False)
class Node:
    """One recorded primitive: its inputs and the vector-Jacobian product.

    ``backward(grad_out)`` returns one gradient (or None) per input.
    """

    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, inputs: tuple, backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out._node = None
        out.requires_grad = False
        if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._node = Node(op, inputs, backward)
        return out

    # -- basic accessors -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise UsageError("division by a tensor is not supported")
        return mul(self, 1.0 / float(scalar))

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return tmean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Topologically ordered nodes reachable from an output tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for parent in t._node.inputs:
                    if parent.requires_grad and id(parent) not in seen:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that ``loss`` depends on."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(tape.nodes):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        parent_grads = t._node.backward(g)
        for parent, pg in zip(t._node.inputs, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise primitives


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, "add", (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def _bw(g):
        ga = _unbroadcast(g * b.data, sa) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, sb) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, "mul", (a, b), _bw)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, "neg", (a,), lambda g: (-g,))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape

    def _bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._from_op(a.data.sum(axis=axis), "sum", (a,), _bw)


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return tsum(a, axis) * (1.0 / n)


def relu(x: Tensor) -> Tensor:
    # right subgradient at 0
    mask = x.data >= 0
    return Tensor._from_op(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_array(z) -> np.ndarray:
    """Numerically stable logistic function on plain arrays."""
    return _sigmoid(np.asarray(z, dtype=np.float64))


def softplus_array(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(np.asarray(x.data, dtype=np.float64))
    return Tensor._from_op(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    out = softplus_array(x.data)
    return Tensor._from_op(out, "softplus", (x,), lambda g: (g * _sigmoid(x.data),))


# ---------------------------------------------------------------------------
# convolution and pooling


def _as_batched(x: Tensor, what: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise DimensionError(f"{what} must be C×H×W or N×C×H×W, got shape {x.shape}")


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Stride-1 cross-correlation with zero 'same' padding.

    ``x`` is Cin×H×W (or N×Cin×H×W), ``kernel`` is Cout×Cin×k×k with k odd.
    """
    xb, single = _as_batched(x, "conv2d input")
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be Cout×Cin×k×k, got shape {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"kernel window must be square and odd, got {kh}×{kw}")
    if xb.shape[1] != cin:
        raise DimensionError(f"input has {xb.shape[1]} channels but kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"bias must have shape ({cout},), got {bias.shape}")
    n, _, h, w = xb.shape
    k = kh
    p = (k - 1) // 2
    kd = kernel.data

    if k == 1:
        cols = None
        out = np.einsum("nchw,oc->nohw", xb, kd[:, :, 0, 0], optimize=True)
    else:
        xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))
        # im2col: rows are output pixels (n, i, j), columns are (cin, di, dj)
        cols = sliding_window_view(xp, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
        cols = cols.reshape(n * h * w, cin * k * k)
        out = (cols @ kd.reshape(cout, -1).T).reshape(n, h, w, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    if single:
        out = out[0]

    def _bw(g):
        gb4 = g[None] if single else g
        gx = gk = gbias = None
        if k == 1:
            if kernel.requires_grad:
                gk = np.einsum("nohw,nchw->oc", gb4, xb, optimize=True)[:, :, None, None]
            if x.requires_grad:
                gx = np.einsum("nohw,oc->nchw", gb4, kd[:, :, 0, 0], optimize=True)
        else:
            g2 = gb4.transpose(0, 2, 3, 1).reshape(n * h * w, cout)
            if kernel.requires_grad:
                gk = (g2.T @ cols).reshape(kd.shape)
            if x.requires_grad:
                gcols = (g2 @ kd.reshape(cout, -1)).reshape(n, h, w, cin, k, k)
                gxp = np.zeros((n, cin, h + 2 * p, w + 2 * p))
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + h, j:j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                gx = gxp[:, :, p:p + h, p:p + w]
        if gx is not None and single:
            gx = gx[0]
        if bias is not None and bias.requires_grad:
            gbias = gb4.sum(axis=(0, 2, 3))
        return (gx, gk, gbias) if bias is not None else (gx, gk)

    inputs = (x, kernel, bias) if bias is not None else (x, kernel)
    return Tensor._from_op(out, "conv2d", inputs, _bw)


def global_average_pool(m: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: C×H×W -> C, N×C×H×W -> N×C."""
    if m.ndim not in (3, 4):
        raise DimensionError(f"map must be C×H×W or N×C×H×W, got shape {m.shape}")
    h, w = m.shape[-2:]
    if h * w == 0:
        raise DimensionError("global_average_pool over an empty spatial extent")
    shape = m.shape
    scale = 1.0 / (h * w)

    def _bw(g):
        return (np.broadcast_to(g[..., None, None] * scale, shape).copy(),)

    return Tensor._from_op(m.data.mean(axis=(-2, -1)), "gap", (m,), _bw)
