"""Reverse-mode automatic differentiation over float64 numpy arrays."""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

_DEBUG = False


def set_debug(enabled: bool) -> None:
    """Check every op output for NaN/inf and raise on the first one."""
    global _DEBUG
    _DEBUG = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward: Callable | None = None,
                 op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        if _DEBUG and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite output from op {op or 'leaf'!r}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (),
                  _backward=backward_fn if req else None, op=op)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; the grey set detects cycles
    order: list[Tensor] = []
    state: dict[int, int] = {}
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        key = id(node)
        if i == 0:
            s = state.get(key)
            if s == 2:
                continue
            if s == 1:
                raise RuntimeError("cycle detected in compute graph")
            state[key] = 1
        if i < len(node._parents):
            stack.append((node, i + 1))
            child = node._parents[i]
            cs = state.get(id(child))
            if cs == 1:
                raise RuntimeError("cycle detected in compute graph")
            if cs is None:
                stack.append((child, 0))
        else:
            state[key] = 2
            order.append(node)
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None):
    """Populate ``.grad`` on every tensor that ``loss`` depends on.

    If ``params`` is given, returns their gradients in order, with zeros for
    parameters the loss does not depend on.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else None
    if params is not None:
        zero_grad(params)
    if loss.requires_grad:
        order = _topo_order(loss)
        for node in order:
            node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in params]


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _node(a.data + b.data, (a, b), bw, "add")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)
    return _node(-a.data, (a,), bw, "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))
    return _node(a.data * b.data, (a, b), bw, "mul")


def square(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, 2.0 * a.data * g)
    return _node(a.data * a.data, (a,), bw, "square")


def tabs(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, np.sign(a.data) * g)
    return _node(np.abs(a.data), (a,), bw, "abs")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)
    return _node(np.where(mask, a.data, 0.0), (a,), bw, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * d_inner
        _accum(a, g * d)
    return _node(0.5 * x * (1.0 + th), (a,), bw, "gelu")


# -- shape ------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _accum(a, g.reshape(a.shape))
    return _node(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)

    def bw(g):
        _accum(a, np.transpose(g, inv))
    return _node(np.transpose(a.data, axes), (a,), bw, "transpose")


def index(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)
    return _node(a.data[idx], (a,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])
    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tensors, bw, "concat")


# -- reductions ---------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))
    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in np.atleast_1d(axis)])

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / n, a.shape))
    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw, "mean")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return _node(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` is ``(in, out)``."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; ``-inf`` entries get probability 0."""
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return _node(y, (a,), bw, "softmax")


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gamma, beta = as_tensor(gamma), as_tensor(beta)

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            _accum(beta, _unbroadcast(g, beta.shape))
        if a.requires_grad:
            gx = g * gamma.data
            n = x.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _accum(a, dx)
    return _node(xhat * gamma.data + beta.data, (a, gamma, beta), bw, "layer_norm")


# -- convolution and resampling ------------------------------------------------

def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, k, k, h, w))
    for p in range(k):
        for q in range(k):
            cols[:, p, q] = xp[:, p:p + h, q:q + w]
    return cols.reshape(c * k * k, h * w)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero padding preserving spatial size.

    ``x`` is ``(C_in, H, W)``, ``w`` is ``(C_out, C_in, k, k)`` with odd ``k``,
    ``b`` is ``(C_out,)``.
    """
    cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if cin != cin_w or k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, k, h, wd)
    wmat = w.data.reshape(cout, -1)
    out = (wmat @ cols).reshape(cout, h, wd)
    parents = [x, w]
    if b is not None:
        out = out + b.data[:, None, None]
        parents.append(b)

    def bw(g):
        g2 = g.reshape(cout, -1)
        if w.requires_grad:
            _accum(w, (g2 @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=1))
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(cin, k, k, h, wd)
            dxp = np.zeros_like(xp)
            for p in range(k):
                for q in range(k):
                    dxp[:, p:p + h, q:q + wd] += dcols[:, p, q]
            _accum(x, dxp[:, pad:pad + h, pad:pad + wd])
    return _node(out, parents, bw, "conv2d")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling over the last two axes."""
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {(h, w)}")
    out = x.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def bw(g):
        up = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        _accum(x, up)
    return _node(out, (x,), bw, "avg_pool2")


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling over the last two axes."""
    *lead, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def bw(g):
        _accum(x, g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1)))
    return _node(out, (x,), bw, "upsample2")


def unfold_mask(h: int, w: int, k: int, r: int) -> np.ndarray:
    """Validity of each dilated window offset, shape ``(h, w, k*k)``."""
    half = k // 2
    offs = np.arange(-half, half + 1) * r
    rows = np.arange(h)[:, None] + offs[None, :]
    cols = np.arange(w)[:, None] + offs[None, :]
    rv = (rows >= 0) & (rows < h)
    cv = (cols >= 0) & (cols < w)
    return (rv[:, None, :, None] & cv[None, :, None, :]).reshape(h, w, k * k)


def unfold(x: Tensor, k: int, r: int = 1) -> tuple[Tensor, np.ndarray]:
    """Gather dilated ``k x k`` neighbourhoods of a ``(H, W, C)`` grid.

    Returns ``(patches, mask)`` with ``patches`` of shape ``(H, W, k*k, C)``
    where entry ``[m, n, p*k + q]`` holds ``x[m + (p - k//2) r, n + (q - k//2) r]``
    and zero outside the grid; ``mask`` flags in-bounds entries.
    """
    if k % 2 == 0 or k < 1:
        raise ValueError(f"window size must be odd and positive, got {k}")
    if r < 1:
        raise ValueError(f"dilation must be >= 1, got {r}")
    h, w, c = x.shape
    pad = (k // 2) * r
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    out = np.empty((h, w, k * k, c))
    for p in range(k):
        for q in range(k):
            out[:, :, p * k + q] = xp[p * r:p * r + h, q * r:q * r + w]
    mask = unfold_mask(h, w, k, r)

    def bw(g):
        gp = np.zeros_like(xp)
        for p in range(k):
            for q in range(k):
                gp[p * r:p * r + h, q * r:q * r + w] += g[:, :, p * k + q]
        _accum(x, gp[pad:pad + h, pad:pad + w])
    return _node(out, (x,), bw, "unfold"), mask
