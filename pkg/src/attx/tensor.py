"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Each op computes its result eagerly with numpy and, when any input needs a
gradient, attaches a closure that pushes the upstream gradient back to its
inputs. :func:`backward` orders the recorded graph topologically and runs the
closures once each, in reverse.
"""
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) or data.dtype != DTYPE else data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if not t.requires_grad:
        return
    # grads are never updated in place, so sharing the upstream array is safe
    if t.grad is None:
        t.grad = g if isinstance(g, np.ndarray) else np.asarray(g, dtype=DTYPE)
    else:
        t.grad = t.grad + g


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------------------
# backward pass

def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every tensor upstream of the scalar ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not attached to any tensor that requires grad")
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # free the graph; leaves keep their .grad
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None


# ---------------------------------------------------------------------------
# elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def _bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), _bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def _bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), _bw)


elementwise_mul = mul


def scale(x, c):
    c = float(c)
    return _result(x.data * c, (x,), lambda g: _accum(x, g * c))


def relu(x):
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: _accum(x, g * mask))


def sigmoid(x):
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(y, (x,), lambda g: _accum(x, g * y * (1.0 - y)))


def softmax(x, axis=-1):
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), _bw)


# ---------------------------------------------------------------------------
# shape ops

def reshape(x, shape):
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: _accum(x, g.reshape(old)))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _result(x.data.transpose(axes), (x,), lambda g: _accum(x, g.transpose(inv)))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _bw(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=ax)):
            _accum(t, part)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, _bw)


def stack(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: shapes differ {tensors[0].shape} vs {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def _bw(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=ax))

    return _result(out, tensors, _bw)


def take(x, index, axis):
    """Select a single index along ``axis`` (the axis is dropped)."""
    ax = axis % x.ndim

    def _bw(g):
        full = np.zeros_like(x.data)
        sl = [slice(None)] * x.ndim
        sl[ax] = index
        full[tuple(sl)] = g
        _accum(x, full)

    return _result(np.take(x.data, index, axis=ax), (x,), _bw)


# ---------------------------------------------------------------------------
# reductions

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _result(out, (x,), _bw)


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def global_avg_pool(x):
    """[batch, time, ch] -> [batch, ch]"""
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects [batch, time, ch], got {x.shape}")
    t = x.shape[1]

    def _bw(g):
        _accum(x, np.broadcast_to(g[:, None, :] / t, x.shape))

    return _result(x.data.mean(axis=1), (x,), _bw)


# ---------------------------------------------------------------------------
# layers

def dense(x, W, b=None):
    """Affine map over the last axis: ``x @ W + b``."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} != ({W.shape[1]},)")
    out = x.data @ W.data
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def _bw(g):
        if x.requires_grad:
            _accum(x, g @ W.data.T)
        if W.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            _accum(W, x.data.reshape(-1, x.shape[-1]).T @ g2)
        if b is not None and b.requires_grad:
            _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _result(out, parents, _bw)


def _same_padding(length, k, stride):
    out = -(-length // stride)
    total = max((out - 1) * stride + k - length, 0)
    return total // 2, total - total // 2


def conv1d(x, kernel, bias=None, stride=1, padding="same"):
    """1-D cross-correlation on channel-last input.

    x: [batch, time, ch_in]; kernel: [k, ch_in, ch_out]; bias: [ch_out].
    ``same`` pads with zeros so that time_out = ceil(time / stride).
    """
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    B, T, cin = x.shape
    k, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv1d: input has {cin} channels, kernel expects {kcin}")
    if padding == "same":
        left, right = _same_padding(T, k, stride)
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    Tp = T + left + right
    if k > Tp:
        raise ShapeError(f"kernel length {k} exceeds padded time length {Tp}")
    tout = (Tp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0))) if left or right else x.data
    # cols[b, t, j, c] = xp[b, t*stride + j, c]
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride]  # [B, tout, cin, k]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * tout, k * cin)
    W2 = kernel.data.reshape(k * cin, cout)
    out = (cols @ W2).reshape(B, tout, cout)
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv1d: bias shape {bias.shape} != ({cout},)")
        out += bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def _bw(g):
        g2 = g.reshape(B * tout, cout)
        if kernel.requires_grad:
            _accum(kernel, (cols.T @ g2).reshape(k, cin, cout))
        if bias is not None and bias.requires_grad:
            _accum(bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ W2.T).reshape(B, tout, k, cin)
            dxp = np.zeros((B, Tp, cin))
            stop = (tout - 1) * stride + 1
            for j in range(k):
                dxp[:, j:j + stop:stride, :] += dcols[:, :, j, :]
            _accum(x, dxp[:, left:left + T, :])

    return _result(out, parents, _bw)


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels):
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm1d(x, gamma, beta, state, training=True, momentum=0.1, eps=1e-5):
    """Per-channel normalisation of [..., ch] over every leading axis."""
    ch = x.shape[-1]
    if gamma.shape != (ch,) or beta.shape != (ch,):
        raise ShapeError(f"batchnorm1d: gamma/beta must have shape ({ch},)")
    n = x.size // ch
    x2 = x.data.reshape(n, ch)
    if training:
        if n < 2:
            raise DegenerateBatchError(f"batchnorm1d needs batch*time >= 2 in train mode, got {n}")
        mu = x2.mean(axis=0)
        xc = x2 - mu
        var = np.einsum("ij,ij->j", xc, xc) / n
        state.running_mean = (1 - momentum) * state.running_mean + momentum * mu
        state.running_var = (1 - momentum) * state.running_var + momentum * var * n / (n - 1)
    else:
        mu, var = state.running_mean, state.running_var
        xc = x2 - mu
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc
    xhat *= inv_std
    out = xhat * gamma.data
    out += beta.data

    def _bw(g):
        g2 = g.reshape(n, ch)
        if gamma.requires_grad:
            _accum(gamma, np.einsum("ij,ij->j", g2, xhat))
        if beta.requires_grad:
            _accum(beta, g2.sum(axis=0))
        if x.requires_grad:
            scale_ = gamma.data * inv_std
            if training:
                gx = g2 - g2.mean(axis=0)
                gx -= xhat * (np.einsum("ij,ij->j", g2, xhat) / n)
                gx *= scale_
            else:
                gx = g2 * scale_
            _accum(x, gx.reshape(x.shape))

    return _result(out.reshape(x.shape), (x, gamma, beta), _bw)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n_class = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_class):
        raise ValueError(f"labels must lie in [0, {n_class})")
    B = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(logsum - z[rows, labels]))

    def _bw(g):
        p = np.exp(z - logsum[:, None])
        p[rows, labels] -= 1.0
        _accum(logits, p * (g / B))

    return _result(np.array(loss), (logits,), _bw)
