"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Tensors wrap ndarrays and record their parents plus a backward closure; calling
``backward`` on a scalar root accumulates exact gradients into every reachable
tensor with ``requires_grad``. Repeated backward calls accumulate additively.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided


class NonScalarRoot(ValueError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference/evaluation paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise NonScalarRoot(f"backward root must be scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        seed = np.ones_like(self.data)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                # leaf: accumulate persistently
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not (p.requires_grad or p._backward is not None):
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
            if node.requires_grad and node._backward is not None:
                # non-leaf tensor explicitly marked: keep its gradient too
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], tuple) else shape[0])

    @property
    def T(self):
        return transpose(self)


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.data.shape),
                            _unbroadcast(g * a.data, b.data.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.data.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    tiny = np.finfo(out.dtype).tiny
    return _make(out, (a,), lambda g: (g * 0.5 / np.maximum(out, tiny),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    # overflow-safe log(1 + exp(x))
    out = np.logaddexp(np.zeros_like(a.data), a.data)
    return _make(out, (a,), lambda g: (g * _sigmoid(a.data),))


def sin(a: Tensor) -> Tensor:
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return _make(np.cos(a.data), (a,), lambda g: (g * -np.sin(a.data),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * (a.data > 0),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)
    return _make(out, (a,), lambda g: (g * np.where(mask, 1.0, slope),))


def astype(a: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    return _make(a.data.astype(dtype), (a,), lambda g: (g.astype(a.data.dtype),))


# ---------------------------------------------------------------------------
# reductions / shape ops

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=False),)

    return _make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(data, tuple(tensors), backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def backward(g):
        return (g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g)

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# convolution

def _conv_windows(x_pad: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = x_pad.shape[:2]
    s0, s1, s2, s3 = x_pad.strides
    return as_strided(
        x_pad,
        shape=(n, c, ho, wo, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _scatter_conv(g: np.ndarray, w: np.ndarray, stride: int, pad: int, out_hw: tuple[int, int]) -> np.ndarray:
    """col2im: scatter grad/output contributions back onto the (padded) input plane."""
    n, o, ho, wo = g.shape
    c = w.shape[1]
    kh, kw = w.shape[2], w.shape[3]
    h, wid = out_hw
    # accumulate channel-last (one matmul per tap, strided adds, single transpose)
    x_pad = np.zeros((n, h + 2 * pad, wid + 2 * pad, c), dtype=g.dtype)
    g_flat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
    for i in range(kh):
        for j in range(kw):
            contrib = (g_flat @ w[:, :, i, j]).reshape(n, ho, wo, c)
            x_pad[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += contrib
    x_pad = np.ascontiguousarray(x_pad.transpose(0, 3, 1, 2))
    if pad:
        return x_pad[:, :, pad:-pad, pad:-pad]
    return x_pad


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D correlation: x (N,C,H,W) with w (O,C,kh,kw) -> (N,O,Ho,Wo)."""
    n, c, h, wid = x.data.shape
    o, c2, kh, kw = w.data.shape
    assert c == c2, f"channel mismatch {c} vs {c2}"
    ho, wo = _conv_out_hw(h, wid, kh, kw, stride, pad)
    x_pad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = _conv_windows(x_pad, kh, kw, stride, ho, wo)
    out = np.einsum("nchwij,ocij->nohw", windows, w.data, optimize=True)
    if b is not None:
        out = out + b.data[None, :, None, None]
    x_needs = _needs_grad(x)  # skip the col2im scatter for constant inputs

    def backward(g):
        gw = np.einsum("nohw,nchwij->ocij", g, windows, optimize=True)
        gx = _scatter_conv(g, w.data, stride, pad, (h, wid)) if x_needs else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, backward)


def conv2d_transpose(y: Tensor, w: Tensor, stride: int, pad: int, out_hw: tuple[int, int]) -> Tensor:
    """Transpose of conv2d with the same (stride, pad): maps (N,O,Ho,Wo) -> (N,C,H,W).

    Forward equals the input-gradient of conv2d; used to build gradient graphs
    (e.g. the R1 penalty) out of first-order ops.
    """
    out = _scatter_conv(y.data, w.data, stride, pad, out_hw)
    kh, kw = w.data.shape[2], w.data.shape[3]
    ho, wo = y.data.shape[2], y.data.shape[3]

    def backward(g):
        g_pad = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        windows = _conv_windows(g_pad, kh, kw, stride, ho, wo)
        gy = np.einsum("nchwij,ocij->nohw", windows, w.data, optimize=True)
        gw = np.einsum("nohw,nchwij->ocij", y.data, windows, optimize=True)
        return (gy, gw)

    return _make(out, (y, w), backward)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    n, c, h, w = x.data.shape
    assert h % k == 0 and w % k == 0, f"pool factor {k} must divide {h}x{w}"
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx.astype(x.data.dtype, copy=False),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# composed helpers

def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    norm = sqrt(sum_(mul(x, x), axis=axis, keepdims=True))
    return div(x, norm)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (B, in) @ w (out, in)^T + b."""
    out = matmul(x, transpose(w))
    if b is not None:
        out = add(out, b)
    return out


def column(x: Tensor, i: int) -> Tensor:
    """Extract column i of a 2D tensor as shape (B,)."""
    sel = np.zeros((x.data.shape[1], 1), dtype=x.data.dtype)
    sel[i, 0] = 1.0
    return reshape(matmul(x, Tensor(sel)), (x.data.shape[0],))


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adam over a name->Tensor parameter dict; state is serializable."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name in self.params:
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            step = self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data = p.data - step.astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state["m"][k], dtype=self.m[k].dtype)
            self.v[k] = np.array(state["v"][k], dtype=self.v[k].dtype)
