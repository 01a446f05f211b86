"""Reverse-mode autodiff over double-precision numpy arrays.

Ops executed inside a ``Tape`` context record themselves in creation order
(which is a topological order); ``backward`` sweeps the list once in
reverse, accumulating gradients into every reachable tensor.  Outside a
tape the same ops run eagerly with no graph.

The op set is deliberately small: arithmetic with broadcasting, matmul,
3x3/1x1 convolution, ReLU/SiLU, GroupNorm, reductions, concat, 2x pooling
and nearest-neighbor upsampling, plus a hook for self-adjoint linear
operators (used to push encoding-operator physics through the tape).
"""

from __future__ import annotations

import numpy as np

_ACTIVE_TAPE = None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_rule")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_rule = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def tracked(self):
        return self.requires_grad or self.backward_rule is not None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


class Tape:
    """Ordered op record; also a context manager enabling recording."""

    def __init__(self):
        self.nodes = []
        self._outer = None

    def __enter__(self):
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        return False

    def backward(self, loss: Tensor):
        """Populate .grad for every tensor reachable from ``loss``."""
        if loss.data.size != 1:
            raise ValueError("loss must be a scalar")
        if loss.backward_rule is None and not loss.requires_grad:
            raise ValueError("loss is not connected to this tape")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_rule is None:
                continue
            node.backward_rule(node.grad)


def backward(tape: Tape, loss: Tensor):
    tape.backward(loss)


def _as_tensor(v):
    return v if isinstance(v, Tensor) else Tensor(v)


def _make(data, parents, rule):
    out = Tensor(data)
    if _ACTIVE_TAPE is not None and any(p.tracked() for p in parents):
        out.parents = tuple(parents)
        out.backward_rule = rule(out)
        _ACTIVE_TAPE.nodes.append(out)
    return out


def _accumulate(t: Tensor, g):
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def rule(out):
        def run(g):
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(g, b.shape))

        return run

    return _make(a.data + b.data, (a, b), rule)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def rule(out):
        def run(g):
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(-g, b.shape))

        return run

    return _make(a.data - b.data, (a, b), rule)


def neg(a):
    a = _as_tensor(a)

    def rule(out):
        def run(g):
            _accumulate(a, -g)

        return run

    return _make(-a.data, (a,), rule)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def rule(out):
        def run(g):
            _accumulate(a, _unbroadcast(g * bd, a.shape))
            _accumulate(b, _unbroadcast(g * ad, b.shape))

        return run

    return _make(ad * bd, (a, b), rule)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def rule(out):
        def run(g):
            _accumulate(a, _unbroadcast(g / bd, a.shape))
            _accumulate(b, _unbroadcast(-g * ad / (bd * bd), b.shape))

        return run

    return _make(ad / bd, (a, b), rule)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim not in (1, 2):
        raise ValueError("matmul supports (m,n)@(n,) and (m,n)@(n,k)")

    def rule(out):
        def run(g):
            if bd.ndim == 1:
                _accumulate(a, np.outer(g, bd))
                _accumulate(b, ad.T @ g)
            else:
                _accumulate(a, g @ bd.T)
                _accumulate(b, ad.T @ g)

        return run

    return _make(ad @ bd, (a, b), rule)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def rule(out):
        def run(g):
            _accumulate(a, g * mask)

        return run

    return _make(a.data * mask, (a,), rule)


def silu(a):
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    val = a.data * s

    def rule(out):
        def run(g):
            _accumulate(a, g * (s * (1.0 + a.data * (1.0 - s))))

        return run

    return _make(val, (a,), rule)


def mean(a):
    a = _as_tensor(a)
    n = a.data.size

    def rule(out):
        def run(g):
            _accumulate(a, np.full(a.shape, float(g) / n))

        return run

    return _make(a.data.mean(), (a,), rule)


def sum_all(a):
    a = _as_tensor(a)

    def rule(out):
        def run(g):
            _accumulate(a, np.full(a.shape, float(g)))

        return run

    return _make(a.data.sum(), (a,), rule)


def mse(a, b):
    """Mean squared error, composed from primitives."""
    d = sub(a, b)
    return mean(mul(d, d))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape

    def rule(out):
        def run(g):
            _accumulate(a, g.reshape(old))

        return run

    return _make(a.data.reshape(shape), (a,), rule)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def rule(out):
        def run(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

        return run

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), rule)


def conv2d(x, w, b=None, kernel=3):
    """2-D convolution, stride 1, zero padding to keep the spatial shape.

    x: (C_in, H, W), w: (C_out, C_in, k, k), optional b: (C_out,).
    Kernel sizes 1 and 3 are supported.
    """
    x = _as_tensor(x)
    w = _as_tensor(w)
    if kernel not in (1, 3):
        raise ValueError("conv2d supports kernel sizes 1 and 3")
    if w.shape[2] != kernel or w.shape[3] != kernel:
        raise ValueError("weight shape disagrees with kernel size")
    cin, h, wd = x.shape
    pad = (kernel - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((cin, kernel, kernel, h, wd))
    for di in range(kernel):
        for dj in range(kernel):
            cols[:, di, dj] = xp[:, di : di + h, dj : dj + wd]
    val = np.tensordot(w.data, cols, axes=([1, 2, 3], [0, 1, 2]))
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        val = val + b.data[:, None, None]
        parents.append(b)

    def rule(out):
        def run(g):
            if b is not None:
                _accumulate(b, g.sum(axis=(1, 2)))
            _accumulate(w, np.tensordot(g, cols, axes=([1, 2], [3, 4])))
            gxp = np.zeros_like(xp)
            for di in range(kernel):
                for dj in range(kernel):
                    gxp[:, di : di + h, dj : dj + wd] += np.tensordot(
                        w.data[:, :, di, dj], g, axes=([0], [0])
                    )
            if pad:
                _accumulate(x, gxp[:, pad:-pad, pad:-pad])
            else:
                _accumulate(x, gxp)

        return run

    return _make(val, tuple(parents), rule)


def group_norm(x, groups, eps=1e-5):
    """Normalize to zero mean / unit variance within channel groups of a
    (C, H, W) tensor.  No learned affine; FiLM supplies scale and shift."""
    x = _as_tensor(x)
    c = x.shape[0]
    if c % groups != 0:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    xg = x.data.reshape(groups, -1)
    m = xg.mean(axis=1, keepdims=True)
    centered = xg - m
    var = (centered**2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    yg = centered * inv

    def rule(out):
        def run(g):
            gg = g.reshape(groups, -1)
            gy_mean = gg.mean(axis=1, keepdims=True)
            gyy_mean = (gg * yg).mean(axis=1, keepdims=True)
            gx = inv * (gg - gy_mean - yg * gyy_mean)
            _accumulate(x, gx.reshape(x.shape))

        return run

    return _make(yg.reshape(x.shape), (x,), rule)


def avg_pool2(x):
    """2x2 average pooling of a (C, H, W) tensor; H and W must be even."""
    x = _as_tensor(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("avg_pool2 needs even spatial dims")
    val = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def rule(out):
        def run(g):
            up = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
            _accumulate(x, up)

        return run

    return _make(val, (x,), rule)


def upsample_nearest2(x):
    """Nearest-neighbor 2x upsampling of a (C, H, W) tensor."""
    x = _as_tensor(x)
    val = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def rule(out):
        def run(g):
            c, h2, w2 = g.shape
            _accumulate(x, g.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4)))

        return run

    return _make(val, (x,), rule)


def linear_selfadjoint(x, fn):
    """Apply a fixed self-adjoint linear operator given as a plain
    ndarray -> ndarray function; its VJP is the operator itself.  Used to
    route measurement-operator physics (e.g. E^H E) through the tape."""
    x = _as_tensor(x)

    def rule(out):
        def run(g):
            _accumulate(x, fn(g))

        return run

    return _make(fn(x.data), (x,), rule)
