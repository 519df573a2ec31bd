"""Reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray plus an optional graph node; ops are Function
subclasses whose ``backward`` returns one gradient per tensor parent.
float64 is the default (finite-difference checks are meaningful there);
float32 tensors stay float32 for the fast path. Convolutions dispatch to the
selected kernel backend (compiled extension or numpy fallback).
"""

from __future__ import annotations

import numpy as np

from . import _kernels


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


_grad_enabled = True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._ctx = None

    # -- introspection ------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return Add.apply(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return Sub.apply(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return Sub.apply(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return Mul.apply(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, _as_tensor(other, self.dtype))

    # -- shape ops ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    # -- nonlinearities -----------------------------------------------------
    def relu(self):
        return Relu.apply(self)

    def sigmoid(self):
        return Sigmoid.apply(self)

    def tanh(self):
        return Tanh.apply(self)

    def softplus(self):
        return Softplus.apply(self)

    def swish(self):
        return Swish.apply(self)

    # -- backward -----------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without a seed gradient needs a scalar output, "
                    f"got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for p in node._ctx.parents:
                    stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            ctx = node._ctx
            if ctx is None or node.grad is None:
                continue
            grads = ctx.backward(node.grad)
            for parent, g in zip(ctx.parents, grads):
                if g is None:
                    continue
                if parent.requires_grad or parent._ctx is not None:
                    parent.grad = g if parent.grad is None else parent.grad + g


def _as_tensor(v, dtype=None) -> Tensor:
    if isinstance(v, Tensor):
        return v
    arr = np.asarray(v)
    if dtype is not None and arr.ndim == 0:
        arr = arr.astype(dtype)  # plain scalars adopt the tensor's precision
    return Tensor(arr)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Function:
    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *args, **kwargs):
        tensors = [a for a in args if isinstance(a, Tensor)]
        ctx = cls(*tensors)
        raw = [a.data if isinstance(a, Tensor) else a for a in args]
        out_data = ctx.forward(*raw, **kwargs)
        track = _grad_enabled and any(t.requires_grad or t._ctx is not None
                                      for t in tensors)
        out = Tensor(out_data)
        if track:
            out._ctx = ctx
            out.requires_grad = True
        return out

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# elementwise / arithmetic

class Add(Function):
    def forward(self, a, b):
        self.sa, self.sb = a.shape, b.shape
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.sa), _unbroadcast(g, self.sb)


class Sub(Function):
    def forward(self, a, b):
        self.sa, self.sb = a.shape, b.shape
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.sa), -_unbroadcast(g, self.sb)


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return (_unbroadcast(g * self.b, self.a.shape),
                _unbroadcast(g * self.a, self.b.shape))


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError(
                f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(
                f"matmul shape mismatch: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        ga = g @ self.b.swapaxes(-1, -2)
        gb = self.a.swapaxes(-1, -2) @ g
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


# ---------------------------------------------------------------------------
# shape ops

class Reshape(Function):
    def forward(self, a, shape):
        self.orig = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.orig),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = axes
        return a.transpose(axes)

    def backward(self, g):
        return (g.transpose(np.argsort(self.axes)),)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.orig = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return a.sum(axis=axis, keepdims=keepdims)

    def _expand(self, g):
        if self.axis is None:
            return np.broadcast_to(g, self.orig).copy()
        if not self.keepdims:
            axis = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, self.orig).copy()

    def backward(self, g):
        return (self._expand(g),)


class Mean(Sum):
    def forward(self, a, axis=None, keepdims=False):
        out = super().forward(a, axis=axis, keepdims=keepdims)
        self.count = a.size // out.size
        return out / self.count

    def backward(self, g):
        return (self._expand(g) / self.count,)


# ---------------------------------------------------------------------------
# nonlinearities

class Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, g):
        return (np.where(self.mask, g, 0.0),)


class Sigmoid(Function):
    def forward(self, a):
        self.y = _sigmoid(a)
        return self.y

    def backward(self, g):
        return (g * self.y * (1.0 - self.y),)


class Tanh(Function):
    def forward(self, a):
        self.y = np.tanh(a)
        return self.y

    def backward(self, g):
        return (g * (1.0 - self.y * self.y),)


class Softplus(Function):
    def forward(self, a):
        self.a = a
        return np.logaddexp(0.0, a).astype(a.dtype)

    def backward(self, g):
        return (g * _sigmoid(self.a),)


class Swish(Function):
    def forward(self, a):
        self.a = a
        self.s = _sigmoid(a)
        return a * self.s

    def backward(self, g):
        return (g * (self.s + self.a * self.s * (1.0 - self.s)),)


class Glu(Function):
    """Gated linear unit on the last axis: first half gated by sigmoid of
    the second half."""

    def forward(self, a):
        d = a.shape[-1]
        if d % 2:
            raise ValueError(f"glu needs an even last axis, got shape {a.shape}")
        self.h = d // 2
        self.x = a[..., : self.h]
        self.s = _sigmoid(a[..., self.h:])
        return self.x * self.s

    def backward(self, g):
        gx = g * self.s
        gg = g * self.x * self.s * (1.0 - self.s)
        return (np.concatenate([gx, gg], axis=-1),)


class Softmax(Function):
    """Softmax over the last axis."""

    def forward(self, a):
        z = a - a.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self.y = e / e.sum(axis=-1, keepdims=True)
        return self.y

    def backward(self, g):
        dot = (g * self.y).sum(axis=-1, keepdims=True)
        return (self.y * (g - dot),)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# normalization

class LayerNorm(Function):
    """Layer norm over the last axis with learnable scale/shift."""

    def forward(self, a, gamma, beta, eps=1e-5):
        if gamma.shape != a.shape[-1:] or beta.shape != a.shape[-1:]:
            raise ValueError(
                f"layer_norm parameter shapes {gamma.shape}/{beta.shape} do not "
                f"match input {a.shape}")
        mu = a.mean(axis=-1, keepdims=True)
        xc = a - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv
        self.gamma = gamma
        return self.gamma * self.xhat + beta

    def backward(self, g):
        d = g.shape[-1]
        dxhat = g * self.gamma
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * self.xhat).sum(axis=-1, keepdims=True)
        dx = self.inv / d * (d * dxhat - s1 - self.xhat * s2)
        axes = tuple(range(g.ndim - 1))
        return dx, (g * self.xhat).sum(axis=axes), g.sum(axis=axes)


class BatchNorm(Function):
    """Batch norm over every axis except ``channel_axis``.

    In training mode batch statistics are used (and running stats, plain
    numpy arrays owned by the calling layer, are updated in place); in eval
    mode the running stats are constants.
    """

    def forward(self, a, gamma, beta, running_mean, running_var,
                training=True, momentum=0.1, eps=1e-5, channel_axis=-1):
        axis = channel_axis % a.ndim
        c = a.shape[axis]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ValueError(
                f"batch_norm parameter shapes {gamma.shape}/{beta.shape} do not "
                f"match channel count {c} of input {a.shape}")
        bshape = [1] * a.ndim
        bshape[axis] = c
        self.bshape = tuple(bshape)
        self.reduce_axes = tuple(i for i in range(a.ndim) if i != axis)
        self.training = training
        self.gamma = gamma.reshape(self.bshape)

        if training:
            mean = a.mean(axis=self.reduce_axes)
            var = a.var(axis=self.reduce_axes)
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
        else:
            mean, var = running_mean, running_var
        self.inv = (1.0 / np.sqrt(var + eps)).reshape(self.bshape)
        self.xhat = (a - mean.reshape(self.bshape)) * self.inv
        self.n = a.size // c
        return self.gamma * self.xhat + beta.reshape(self.bshape)

    def backward(self, g):
        dgamma = (g * self.xhat).sum(axis=self.reduce_axes)
        dbeta = g.sum(axis=self.reduce_axes)
        dxhat = g * self.gamma
        if self.training:
            s1 = dxhat.sum(axis=self.reduce_axes).reshape(self.bshape)
            s2 = ((dxhat * self.xhat).sum(axis=self.reduce_axes)
                  .reshape(self.bshape))
            dx = self.inv / self.n * (self.n * dxhat - s1 - self.xhat * s2)
        else:
            dx = dxhat * self.inv
        return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# convolutions / pooling

class Conv2d(Function):
    """Stride-1, same-padded 2-d convolution: (B,C,H,W) x (O,C,kh,kw)."""

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4:
            raise ValueError(
                f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
        if x.dtype != w.dtype:
            raise ValueError(f"conv2d dtype mismatch: {x.dtype} vs {w.dtype}")
        self.x = np.ascontiguousarray(x)
        self.w = np.ascontiguousarray(w)
        return _kernels.conv2d_forward(self.x, self.w)

    def backward(self, g):
        g = np.ascontiguousarray(g)
        kh, kw = self.w.shape[2], self.w.shape[3]
        return (_kernels.conv2d_backward_input(g, self.w),
                _kernels.conv2d_backward_weight(self.x, g, kh, kw))


class DepthwiseConv1d(Function):
    """Per-channel same-padded 1-d convolution along time: (B,T,C) x (C,K)."""

    def forward(self, x, w):
        if x.ndim != 3 or w.ndim != 2:
            raise ValueError(
                f"depthwise_conv1d expects (B,T,C) and (C,K), got {x.shape} "
                f"and {w.shape}")
        if x.dtype != w.dtype:
            raise ValueError(f"depthwise_conv1d dtype mismatch: {x.dtype} vs {w.dtype}")
        self.x = np.ascontiguousarray(x)
        self.w = np.ascontiguousarray(w)
        return _kernels.dwconv1d_forward(self.x, self.w)

    def backward(self, g):
        g = np.ascontiguousarray(g)
        return (_kernels.dwconv1d_backward_input(g, self.w),
                _kernels.dwconv1d_backward_weight(self.x, g, self.w.shape[1]))


class AvgPool2d(Function):
    """2x2 average pooling with stride 2 on (B,C,H,W)."""

    def forward(self, a):
        b, c, h, w = a.shape
        if h % 2 or w % 2:
            raise ValueError(f"avg_pool2d needs even spatial dims, got {a.shape}")
        return a.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)


# ---------------------------------------------------------------------------
# output head

class AccddoaActivation(Function):
    """Component nonlinearities of the output head, last axis = (ax, ay, ad, o):
    tanh on the direction pair, softplus on distance, sigmoid on on-screen."""

    def forward(self, a):
        if a.shape[-1] != 4:
            raise ValueError(f"head activation expects last axis 4, got {a.shape}")
        self.txy = np.tanh(a[..., 0:2])
        self.sd = _sigmoid(a[..., 2:3])
        self.so = _sigmoid(a[..., 3:4])
        ad = np.logaddexp(0.0, a[..., 2:3]).astype(a.dtype)
        return np.concatenate([self.txy, ad, self.so], axis=-1)

    def backward(self, g):
        gxy = g[..., 0:2] * (1.0 - self.txy * self.txy)
        gd = g[..., 2:3] * self.sd
        go = g[..., 3:4] * self.so * (1.0 - self.so)
        return (np.concatenate([gxy, gd, go], axis=-1),)


# ---------------------------------------------------------------------------
# functional wrappers

def matmul(a, b):
    return MatMul.apply(_as_tensor(a), _as_tensor(b))


def add(a, b):
    a = _as_tensor(a)
    return Add.apply(a, _as_tensor(b, a.dtype))


def mul(a, b):
    a = _as_tensor(a)
    return Mul.apply(a, _as_tensor(b, a.dtype))


def relu(x):
    return Relu.apply(x)


def sigmoid(x):
    return Sigmoid.apply(x)


def tanh(x):
    return Tanh.apply(x)


def softplus(x):
    return Softplus.apply(x)


def swish(x):
    return Swish.apply(x)


def glu(x):
    return Glu.apply(x)


def softmax(x):
    return Softmax.apply(x)


def layer_norm(x, gamma, beta, eps=1e-5):
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def batch_norm(x, gamma, beta, running_mean, running_var, training=True,
               momentum=0.1, eps=1e-5, channel_axis=-1):
    return BatchNorm.apply(x, gamma, beta, running_mean=running_mean,
                           running_var=running_var, training=training,
                           momentum=momentum, eps=eps, channel_axis=channel_axis)


def conv2d(x, w, bias=None):
    out = Conv2d.apply(x, w)
    if bias is not None:
        out = add(out, bias.reshape((1, -1, 1, 1)))
    return out


def depthwise_conv1d(x, w):
    return DepthwiseConv1d.apply(x, w)


def avg_pool2d(x):
    return AvgPool2d.apply(x)


def linear(x, w, b=None):
    """x @ w (+ b). Weight shape (d_in, d_out)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def scaled_dot_attention(q, k, v):
    """softmax(q kᵀ / sqrt(d_k)) v on (..., T, d) operands."""
    dk = q.shape[-1]
    if k.shape[-1] != dk:
        raise ValueError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    scores = mul(matmul(q, k.swapaxes(-1, -2)), 1.0 / np.sqrt(dk))
    return matmul(softmax(scores), v)


def accddoa_activation(x):
    return AccddoaActivation.apply(x)


# ---------------------------------------------------------------------------
# finite-difference checking

def gradcheck(fn, inputs, eps=1e-5, rng=None, max_coords=24):
    """Compare analytic gradients of a scalar-valued ``fn(*inputs)`` against
    central finite differences on a sampled coordinate subset.

    Returns the worst relative error over all checked coordinates; callers
    assert it against their tolerance (1e-4 everywhere in this project).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    if out.size != 1:
        raise ValueError(f"gradcheck needs a scalar output, got {out.shape}")
    out.backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        if ga is None:
            continue
        n = min(max_coords, t.size)
        coords = rng.permutation(t.size)[:n]
        for idx in coords:
            orig = t.data.flat[idx]
            t.data.flat[idx] = orig + eps
            f_plus = float(fn(*inputs).data)
            t.data.flat[idx] = orig - eps
            f_minus = float(fn(*inputs).data)
            t.data.flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(ga.flat[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, rel)
    return worst
