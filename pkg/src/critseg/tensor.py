"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is 64-bit: the point of this stack is verifying formulas against
finite differences, not speed. The graph is recorded eagerly while a loss is
being built and discarded after ``backward()``; parameters keep accumulating
gradients until ``zero_grad``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when an operation receives dimensionally incompatible inputs."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (plain numpy forward)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy float64 array plus the tape hooks needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the graph."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def backward(self):
        """Populate ``grad`` on every reachable leaf that requires it.

        Only defined on scalars: each loss is a single recorded scalar and
        the min/max structure of the training procedure is realized by
        choosing which parameter sets step after each call.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                if parent._backward is None:
                    if parent.requires_grad:
                        if parent.grad is None:
                            parent.grad = np.zeros_like(parent.data)
                        parent.grad += pg
                else:
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else prev + pg


class Parameter(Tensor):
    """A trainable tensor: value, gradient, and optimizer moment buffers.

    The gradient buffer always exists and always matches the value shape;
    ``zero_grad`` resets it to exact zeros. Moment buffers are allocated on
    first use by the optimizer.
    """

    __slots__ = ("name", "m", "v", "steps")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.m = None
        self.v = None
        self.steps = 0

    def zero_grad(self):
        self.grad[...] = 0.0


def _toposort(root: Tensor):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent._backward is not None:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _taped(*tensors) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in tensors)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = True
    out._parents = tuple(parents)
    out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / arithmetic ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    if not _taped(a, b):
        return Tensor(data)

    def backward(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _result(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data
    if not _taped(a, b):
        return Tensor(data)

    def backward(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _result(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    if not _taped(a, b):
        return Tensor(data)

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _result(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data
    if not _taped(a, b):
        return Tensor(data)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if b.requires_grad
            else None
        )
        return (ga, gb)

    return _result(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    if not _taped(a):
        return Tensor(-a.data)
    return _result(-a.data, (a,), lambda g: (-g,))


def pow_const(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    c = float(exponent)
    data = a.data**c
    if not _taped(a):
        return Tensor(data)

    def backward(g):
        return (g * c * a.data ** (c - 1.0),)

    return _result(data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)
    if not _taped(a):
        return Tensor(data)
    return _result(data, (a,), lambda g: (g / a.data,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)
    if not _taped(a):
        return Tensor(data)
    return _result(data, (a,), lambda g: (g * data,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through wherever output == input."""
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    if not _taped(a):
        return Tensor(data)
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(data, (a,), lambda g: (g * mask,))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if not _taped(a):
        return Tensor(data)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in axes)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _result(data, (a,), backward)


def tmean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)
    if not _taped(a):
        return Tensor(data)
    return _result(data, (a,), lambda g: (g.reshape(a.data.shape),))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data @ b.data
    if not _taped(a, b):
        return Tensor(data)

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return (ga, gb)

    return _result(data, (a, b), backward)


def take_row(a, index: int) -> Tensor:
    """Select one leading-axis row of a 2-D tensor."""
    a = _as_tensor(a)
    data = a.data[index]
    if not _taped(a):
        return Tensor(data)

    def backward(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return (out,)

    return _result(data, (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _taped(*tensors):
        return Tensor(data)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(
            p if t.requires_grad else None for p, t in zip(pieces, tensors)
        )

    return _result(data, tensors, backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)
    if not _taped(a):
        return Tensor(data)
    return _result(data, (a,), lambda g: (g * (a.data > 0.0),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    factor = np.where(a.data > 0.0, 1.0, slope)
    data = a.data * factor
    if not _taped(a):
        return Tensor(data)
    return _result(data, (a,), lambda g: (g * factor,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = expit(a.data)
    if not _taped(a):
        return Tensor(data)
    return _result(data, (a,), lambda g: (g * data * (1.0 - data),))


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    if not _taped(a):
        return Tensor(data)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _result(data, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    if not _taped(a):
        return Tensor(data)

    def backward(g):
        return (g - np.exp(data) * g.sum(axis=axis, keepdims=True),)

    return _result(data, (a,), backward)


# ---------------------------------------------------------------------------
# convolution (direct cross-correlation, H x W x C layout)
# ---------------------------------------------------------------------------

def _im2col(padded: np.ndarray, k: int, stride: int, out_h: int, out_w: int):
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    windows = windows[::stride, ::stride]
    # row layout (channel, dy, dx); kernels are transposed to match
    return windows.reshape(out_h * out_w, padded.shape[2] * k * k)


def conv2d(x, kernel, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of an H x W x Cin map with a k x k x Cin x Cout kernel."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(
            f"conv2d wants input HxWxC and kernel kxkxCinxCout, got "
            f"{x.data.shape} and {kernel.data.shape}"
        )
    h, w, cin = x.data.shape
    k, k2, kcin, cout = kernel.data.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got {kernel.data.shape}")
    if kcin != cin:
        raise ShapeError(
            f"channel mismatch: input has {cin} channels, kernel expects {kcin} "
            f"(input {x.data.shape}, kernel {kernel.data.shape})"
        )
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid stride={stride} pad={pad}")
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(
            f"padded spatial dims ({h + 2 * pad}x{w + 2 * pad}) smaller than kernel {k}x{k}"
        )
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (cout,):
            raise ShapeError(
                f"bias shape {bias.data.shape} does not match {cout} output channels"
            )

    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (w + 2 * pad - k) // stride + 1

    if k == 1 and stride == 1 and pad == 0:
        cols = x.data.reshape(h * w, cin)
        kmat = kernel.data.reshape(cin, cout)
    else:
        padded = (
            np.pad(x.data, ((pad, pad), (pad, pad), (0, 0))) if pad else x.data
        )
        cols = _im2col(padded, k, stride, out_h, out_w)
        kmat = kernel.data.transpose(2, 0, 1, 3).reshape(cin * k * k, cout)

    out = cols @ kmat
    if bias is not None:
        out += bias.data  # in place: `out` is freshly owned
    out = out.reshape(out_h, out_w, cout)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    if not _taped(*parents):
        return Tensor(out)

    # only retain the patch matrix if the kernel gradient will be needed
    saved_cols = cols if kernel.requires_grad else None

    def backward(g):
        g2 = g.reshape(out_h * out_w, cout)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk_rows = (saved_cols.T @ g2).reshape(cin, k, k, cout)
            gk = gk_rows.transpose(1, 2, 0, 3)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gx = _conv2d_input_grad(g, kernel.data, h, w, stride, pad)
        if bias is None:
            return (gx, gk)
        return (gx, gk, gb)

    return _result(out, parents, backward)


def _conv2d_input_grad(g, kernel, h, w, stride, pad):
    """Gradient wrt the conv input: correlate the (dilated) upstream gradient
    with the spatially flipped, channel-transposed kernel."""
    k = kernel.shape[0]
    cin, cout = kernel.shape[2], kernel.shape[3]
    out_h, out_w, _ = g.shape
    if k == 1 and stride == 1 and pad == 0:
        return (g.reshape(out_h * out_w, cout) @ kernel.reshape(cin, cout).T).reshape(
            h, w, cin
        )
    if stride > 1:
        dil = np.zeros(((out_h - 1) * stride + 1, (out_w - 1) * stride + 1, cout))
        dil[::stride, ::stride] = g
    else:
        dil = g
    # rows (cout, dy, dx); entry [a,b,co,ci] = kernel[k-1-a, k-1-b, ci, co]
    flipped = kernel[::-1, ::-1].transpose(3, 0, 1, 2).reshape(cout * k * k, cin)
    gp = np.pad(dil, ((k - 1, k - 1), (k - 1, k - 1), (0, 0)))
    full_h = dil.shape[0] + k - 1
    full_w = dil.shape[1] + k - 1
    cols = _im2col(gp, k, 1, full_h, full_w)
    full = (cols @ flipped).reshape(full_h, full_w, cin)
    if full_h == h + 2 * pad and full_w == w + 2 * pad:
        canvas = full
    else:
        # rows/cols never scanned by any window get zero gradient
        canvas = np.zeros((h + 2 * pad, w + 2 * pad, cin))
        canvas[:full_h, :full_w] = full
    return canvas[pad : pad + h, pad : pad + w]
