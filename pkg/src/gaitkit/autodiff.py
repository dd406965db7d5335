"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous row-major numpy buffers (float32 or float64).
Every operation records a backward closure on a tape; calling
``Tensor.backward()`` on a scalar loss runs the tape in reverse
topological order and accumulates gradients into ``.grad``.

The op set is deliberately small: exactly what a convolutional gait
network with temporal/horizontal pooling and its losses needs.  There is
no broadcasting beyond bias addition, no mixed precision, no GPU path.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense numeric array plus an optional node on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, op={self.op})"

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not part of the op set")
        return mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def backward(self):
        """Backpropagate from a scalar loss; fills ``.grad`` on reachable leaves."""
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ContractError("loss is not finite")
        self.grad = np.ones_like(self.data)
        for node in _toposort(self):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root):
    """Nodes of the tape reachable from root, root first (reverse post-order)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def _node(out_data, parents, backward_fn, op):
    t = Tensor.__new__(Tensor)
    t.data = out_data
    t.grad = None
    t.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_binary(a, b, op):
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: mixed dtypes {a.data.dtype} vs {b.data.dtype}")
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# -- elementwise -----------------------------------------------------------

def add(a, b):
    _check_binary(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    _check_binary(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    _check_binary(a, b, "mul")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), bw, "mul")


def add_scalar(a, s):
    s = a.data.dtype.type(s)

    def bw(g):
        _accum(a, g)

    return _node(a.data + s, (a,), bw, "add_scalar")


def mul_scalar(a, s):
    s = a.data.dtype.type(s)

    def bw(g):
        _accum(a, g * s)

    return _node(a.data * s, (a,), bw, "mul_scalar")


def relu(x):
    mask = x.data > 0

    def bw(g):
        _accum(x, g * mask)

    return _node(np.where(mask, x.data, x.data.dtype.type(0)), (x,), bw, "relu")


# -- shape plumbing ---------------------------------------------------------

def reshape(x, shape):
    shape = tuple(shape)
    old = x.data.shape

    def bw(g):
        _accum(x, np.ascontiguousarray(g).reshape(old))

    return _node(np.ascontiguousarray(x.data).reshape(shape), (x,), bw, "reshape")


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(x, g.transpose(inv))

    return _node(x.data.transpose(axes), (x,), bw, "transpose")


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of zero tensors")
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ContractError("concat: mixed dtypes")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def slice_axis(x, axis, start, stop):
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        dx = np.zeros_like(x.data)
        dx[idx] = g
        _accum(x, dx)

    return _node(x.data[idx].copy(), (x,), bw, "slice")


# -- reductions -------------------------------------------------------------

def reduce_sum(x, axis=None, keepdims=False):
    if axis is None:
        def bw(g):
            _accum(x, np.broadcast_to(g.reshape(()), x.data.shape).copy())

        out = x.data.sum()
        return _node(np.asarray(out, dtype=x.data.dtype).reshape(()), (x,), bw, "sum")

    def bw(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(ge, x.data.shape).copy())

    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw, "sum")


def reduce_mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.data.size

        def bw(g):
            _accum(x, np.broadcast_to(g.reshape(()), x.data.shape).copy() / n)

        return _node(np.asarray(x.data.mean(), dtype=x.data.dtype).reshape(()), (x,), bw, "mean")

    n = x.data.shape[axis]

    def bw(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(ge, x.data.shape).copy() / n)

    return _node(x.data.mean(axis=axis, keepdims=keepdims), (x,), bw, "mean")


def reduce_max(x, axis, keepdims=False):
    """Max over one axis; the gradient routes to the first argmax per slice."""
    idx = np.argmax(x.data, axis=axis)
    out = np.max(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        dx = np.zeros_like(x.data)
        ge = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(dx, np.expand_dims(idx, axis), ge, axis)
        _accum(x, dx)

    return _node(out, (x,), bw, "max")


def softmax(x, axis):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, (g - dot) * y)

    return _node(y, (x,), bw, "softmax")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    if a.data.dtype != b.data.dtype:
        raise ContractError("matmul: mixed dtypes")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, bias=None):
    """x: [n, din], w: [dout, din], optional bias [dout] -> [n, dout]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear: incompatible shapes x{x.data.shape} w{w.data.shape}")
    if x.data.dtype != w.data.dtype:
        raise ContractError("linear: mixed dtypes")
    out = x.data @ w.data.T
    parents = [x, w]
    if bias is not None:
        if bias.data.shape != (w.data.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.data.shape} != ({w.data.shape[0]},)")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)
        if bias is not None:
            _accum(bias, g.sum(axis=0))

    return _node(out, parents, bw, "linear")


# -- convolutions -------------------------------------------------------------

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _triple(v):
    return (v, v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, w, bias=None, stride=(1, 1), pad=(0, 0)):
    """Cross-correlation of x [N,Cin,H,W] with w [Cout,Cin,kh,kw], zero padding."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    X, W = x.data, w.data
    if X.ndim != 4 or W.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d operands, got {X.shape} and {W.shape}")
    n, cin, h, wd = X.shape
    cout, cin2, kh, kw = W.shape
    if cin != cin2:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {cin2}")
    if kh > h + 2 * ph or kw > wd + 2 * pw:
        raise ShapeError("conv2d: kernel larger than padded input")
    if x.data.dtype != w.data.dtype:
        raise ContractError("conv2d: mixed dtypes")

    Xp = np.pad(X, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(Xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * kh * kw)
    wmat = W.reshape(cout, -1)
    out = (col @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = [x, w]
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")
        out = out + bias.data.reshape(1, cout, 1, 1)
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def bw(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        _accum(w, (gmat.T @ col).reshape(W.shape))
        if bias is not None:
            _accum(bias, gmat.sum(axis=0))
        if x.requires_grad:
            dcol = (gmat @ wmat).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dXp = np.zeros_like(Xp)
            for i in range(kh):
                for j in range(kw):
                    dXp[:, :, i : i + ho * sh : sh, j : j + wo * sw : sw] += dcol[..., i, j]
            _accum(x, dXp[:, :, ph : ph + h, pw : pw + wd])

    return _node(out, parents, bw, "conv2d")


def conv3d(x, w, bias=None, stride=(1, 1, 1), pad=(0, 0, 0)):
    """Cross-correlation of x [N,Cin,T,H,W] with w [Cout,Cin,kt,kh,kw], zero padding."""
    st, sh, sw = _triple(stride)
    pt, ph, pw = _triple(pad)
    X, W = x.data, w.data
    if X.ndim != 5 or W.ndim != 5:
        raise ShapeError(f"conv3d: expected 5-d operands, got {X.shape} and {W.shape}")
    n, cin, t, h, wd = X.shape
    cout, cin2, kt, kh, kw = W.shape
    if cin != cin2:
        raise ShapeError(f"conv3d: input has {cin} channels, kernel expects {cin2}")
    if kt > t + 2 * pt or kh > h + 2 * ph or kw > wd + 2 * pw:
        raise ShapeError("conv3d: kernel larger than padded input")
    if x.data.dtype != w.data.dtype:
        raise ContractError("conv3d: mixed dtypes")

    Xp = np.pad(X, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    to = (t + 2 * pt - kt) // st + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(Xp, (kt, kh, kw), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(n * to * ho * wo, cin * kt * kh * kw)
    wmat = W.reshape(cout, -1)
    out = (col @ wmat.T).reshape(n, to, ho, wo, cout).transpose(0, 4, 1, 2, 3)
    parents = [x, w]
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError(f"conv3d: bias shape {bias.data.shape} != ({cout},)")
        out = out + bias.data.reshape(1, cout, 1, 1, 1)
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def bw(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(n * to * ho * wo, cout)
        _accum(w, (gmat.T @ col).reshape(W.shape))
        if bias is not None:
            _accum(bias, gmat.sum(axis=0))
        if x.requires_grad:
            dcol = (gmat @ wmat).reshape(n, to, ho, wo, cin, kt, kh, kw).transpose(0, 4, 1, 2, 3, 5, 6, 7)
            dXp = np.zeros_like(Xp)
            for a in range(kt):
                for b in range(kh):
                    for c in range(kw):
                        dXp[:, :, a : a + to * st : st, b : b + ho * sh : sh, c : c + wo * sw : sw] += dcol[..., a, b, c]
            _accum(x, dXp[:, :, pt : pt + t, ph : ph + h, pw : pw + wd])

    return _node(out, parents, bw, "conv3d")


# -- batch normalization -------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean, running_var, training,
               eps=1e-5, momentum=0.1):
    """Normalize over all axes except channel axis 1.

    ``gamma``/``beta`` are 1-d Tensors of length C (``beta`` may be None for a
    shift-free neck).  ``running_mean``/``running_var`` are plain ndarrays,
    updated in place in training mode with ``new = (1-momentum)*old +
    momentum*batch``; eval mode normalizes with them instead of batch
    statistics.  Batch variance is the biased estimator throughout.
    """
    if eps <= 0:
        raise ContractError(f"batch_norm: eps must be positive, got {eps}")
    X = x.data
    if X.ndim < 2:
        raise ShapeError("batch_norm: input must have a leading batch axis and a channel axis")
    c = X.shape[1]
    if gamma.data.shape != (c,):
        raise ShapeError(f"batch_norm: gamma shape {gamma.data.shape} != ({c},)")
    if beta is not None and beta.data.shape != (c,):
        raise ShapeError(f"batch_norm: beta shape {beta.data.shape} != ({c},)")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError("batch_norm: running statistics must have length C")

    axes = (0,) + tuple(range(2, X.ndim))
    shape_c = (1, c) + (1,) * (X.ndim - 2)
    gam = gamma.data.reshape(shape_c)

    if training:
        mu = X.mean(axis=axes, keepdims=True)
        xc = X - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        ivstd = 1.0 / np.sqrt(var + X.dtype.type(eps))
        xhat = xc * ivstd
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(c)
    else:
        ivstd = (1.0 / np.sqrt(running_var + eps)).astype(X.dtype).reshape(shape_c)
        xhat = (X - running_mean.astype(X.dtype).reshape(shape_c)) * ivstd

    out = xhat * gam
    if beta is not None:
        out = out + beta.data.reshape(shape_c)
    parents = [x, gamma] + ([beta] if beta is not None else [])
    n = X.size // c

    def bw(g):
        _accum(gamma, (g * xhat).sum(axis=axes))
        if beta is not None:
            _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gam
            if training:
                dx = (ivstd / n) * (
                    n * dxhat
                    - dxhat.sum(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
                )
            else:
                dx = dxhat * ivstd
            _accum(x, dx)

    return _node(out, parents, bw, "batch_norm")


def backward(loss, params):
    """Run backprop from ``loss`` and collect gradients for a named parameter map.

    Parameters not reachable from the loss get zero gradients.
    """
    loss.backward()
    grads = {}
    for name, p in params.items():
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return grads
