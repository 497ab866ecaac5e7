"""Primitive kernel set: forward rules plus the adjoint each registers on the tape.

Every primitive checks its contract, computes the forward value with numpy,
and (when a tape is active and an input requires gradients) records a closure
that accumulates adjoints into its parents. Broadcasting follows numpy
semantics; adjoints are summed back to the parent shape.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractViolation, DomainError
from .tape import Tensor, active_tape


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add an adjoint contribution into a tensor's gradient buffer."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint over axes that numpy broadcasting introduced."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def register(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap a forward value; record the adjoint when gradients are needed.

    ``backward_fn`` receives the output adjoint(s) and must call
    ``accumulate`` on the parents it differentiates.
    """
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        tape.record((out,), backward_fn)
        return out
    return Tensor(data)


def register_multi(datas, parents: tuple[Tensor, ...], backward_fn) -> tuple[Tensor, ...]:
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        outs = tuple(Tensor(d, requires_grad=True) for d in datas)
        tape.record(outs, backward_fn)
        return outs
    return tuple(Tensor(d) for d in datas)


def _broadcast(fn, a: np.ndarray, b: np.ndarray, opname: str) -> np.ndarray:
    try:
        return fn(a, b)
    except ValueError as exc:
        raise ContractViolation(
            f"{opname}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from exc


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast(np.add, a.data, b.data, "add")

    def bw(g):
        accumulate(a, unbroadcast(g, a.data.shape))
        accumulate(b, unbroadcast(g, b.data.shape))

    return register(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast(np.subtract, a.data, b.data, "sub")

    def bw(g):
        accumulate(a, unbroadcast(g, a.data.shape))
        accumulate(b, unbroadcast(-g, b.data.shape))

    return register(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast(np.multiply, a.data, b.data, "mul")

    def bw(g):
        accumulate(a, unbroadcast(g * b.data, a.data.shape))
        accumulate(b, unbroadcast(g * a.data, b.data.shape))

    return register(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0.0):
        raise DomainError("div: divisor contains zero")
    data = _broadcast(np.divide, a.data, b.data, "div")

    def bw(g):
        accumulate(a, unbroadcast(g / b.data, a.data.shape))
        accumulate(b, unbroadcast(-g * data / b.data, b.data.shape))

    return register(data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return register(-a.data, (a,), lambda g: accumulate(a, -g))


def power(a, exponent: float) -> Tensor:
    """Elementwise a**p for a scalar exponent."""
    a = as_tensor(a)
    p = float(exponent)
    if p != round(p) and np.any(a.data < 0.0):
        raise DomainError(f"power: negative base with non-integer exponent {p}")
    if p < 0.0 and np.any(a.data == 0.0):
        raise DomainError(f"power: zero base with negative exponent {p}")
    data = a.data ** p

    def bw(g):
        accumulate(a, g * p * a.data ** (p - 1.0))

    return register(data, (a,), bw)


# ------------------------------------------------------------------- unary

def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)
    return register(data, (a,), lambda g: accumulate(a, g * data))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: non-positive operand")
    data = np.log(a.data)
    return register(data, (a,), lambda g: accumulate(a, g / a.data))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: negative operand")
    data = np.sqrt(a.data)

    def bw(g):
        accumulate(a, g / (2.0 * np.maximum(data, 1e-300)))

    return register(data, (a,), bw)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    data = np.abs(a.data)
    return register(data, (a,), lambda g: accumulate(a, g * np.sign(a.data)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)
    return register(data, (a,), lambda g: accumulate(a, g * (a.data > 0.0)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        accumulate(a, g * data * (1.0 - data))

    return register(data, (a,), bw)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        accumulate(a, g * s)

    return register(data, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)
    return register(data, (a,), lambda g: accumulate(a, g * (1.0 - data * data)))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return register(np.sin(a.data), (a,), lambda g: accumulate(a, g * np.cos(a.data)))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return register(np.cos(a.data), (a,), lambda g: accumulate(a, g * -np.sin(a.data)))


def atan2(y, x) -> Tensor:
    """Elementwise atan2; adjoint denominators are floored for the (0, 0) corner."""
    y, x = as_tensor(y), as_tensor(x)
    data = _broadcast(np.arctan2, y.data, x.data, "atan2")

    def bw(g):
        r2 = np.maximum(x.data * x.data + y.data * y.data, 1e-40)
        accumulate(y, unbroadcast(g * x.data / r2, y.data.shape))
        accumulate(x, unbroadcast(-g * y.data / r2, x.data.shape))

    return register(data, (y, x), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the adjoint routes to the second operand."""
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast(np.maximum, a.data, b.data, "maximum")

    def bw(g):
        mask = a.data > b.data
        accumulate(a, unbroadcast(g * mask, a.data.shape))
        accumulate(b, unbroadcast(g * ~mask, b.data.shape))

    return register(data, (a, b), bw)


def gelu(a) -> Tensor:
    """Smooth gate used inside MLP blocks (tanh form)."""
    a = as_tensor(a)
    c = math.sqrt(2.0 / math.pi)
    inner = mul(add(a, mul(mul(mul(a, a), a), 0.044715)), c)
    return mul(mul(a, add(tanh(inner), 1.0)), 0.5)


# -------------------------------------------------------------- reductions

def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return register(data, (a,), bw)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))

    def bw(g):
        gg = g / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return register(data, (a,), bw)


# ------------------------------------------------------------------- shape

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)
    return register(data, (a,), lambda g: accumulate(a, g.reshape(a.data.shape)))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    data = np.swapaxes(a.data, ax1, ax2).copy()
    return register(data, (a,), lambda g: accumulate(a, np.swapaxes(g, ax1, ax2)))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            accumulate(t, piece)

    return register(data, tuple(tensors), bw)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    data = a.data[idx]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=np.float64)

    def bw(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        accumulate(a, buf)

    return register(data, (a,), bw)


# ------------------------------------------------------------------ linear

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolation(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bw(g):
        accumulate(a, g @ b.data.T)
        accumulate(b, a.data.T @ g)

    return register(data, (a, b), bw)


def dense(x, w, b=None) -> Tensor:
    """x[..., d_in] @ w[d_in, d_out] (+ b), folding leading axes through matmul."""
    x = as_tensor(x)
    lead = x.data.shape[:-1]
    flat = reshape(x, (-1, x.data.shape[-1]))
    out = matmul(flat, w)
    out = reshape(out, lead + (w.data.shape[-1],))
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------- nn

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        accumulate(a, data * (g - dot))

    return register(data, (a,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        accumulate(gamma, (g * xhat).sum(axis=lead))
        accumulate(beta, g.sum(axis=lead))
        gxh = g * gamma.data
        term = gxh - gxh.mean(axis=-1, keepdims=True) - xhat * (gxh * xhat).mean(axis=-1, keepdims=True)
        accumulate(x, inv * term)

    return register(data, (x, gamma, beta), bw)


def interp_linear(a, out_len: int) -> Tensor:
    """Resample the last axis to ``out_len`` points by linear interpolation.

    Endpoints map to endpoints; interior points average their bracketing
    samples with weights proportional to distance.
    """
    a = as_tensor(a)
    d = a.data.shape[-1]
    if d < 2:
        raise ContractViolation(f"interp_linear needs at least 2 input points, got {d}")
    t = np.linspace(0.0, d - 1.0, int(out_len))
    i0 = np.minimum(t.astype(np.int64), d - 2)
    w = t - i0
    data = a.data[..., i0] * (1.0 - w) + a.data[..., i0 + 1] * w

    def bw(g):
        buf = np.zeros_like(a.data)
        flat = buf.reshape(-1, d)
        gf = g.reshape(-1, g.shape[-1])
        rows = np.arange(flat.shape[0])[:, None]
        np.add.at(flat, (rows, i0[None, :]), gf * (1.0 - w))
        np.add.at(flat, (rows, (i0 + 1)[None, :]), gf * w)
        accumulate(a, buf)

    return register(data, (a,), bw)


# ------------------------------------------------------- operator plumbing

def _coerce(other):
    return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=np.float64))


Tensor.__add__ = lambda self, o: add(self, _coerce(o))
Tensor.__radd__ = lambda self, o: add(_coerce(o), self)
Tensor.__sub__ = lambda self, o: sub(self, _coerce(o))
Tensor.__rsub__ = lambda self, o: sub(_coerce(o), self)
Tensor.__mul__ = lambda self, o: mul(self, _coerce(o))
Tensor.__rmul__ = lambda self, o: mul(_coerce(o), self)
Tensor.__truediv__ = lambda self, o: div(self, _coerce(o))
Tensor.__rtruediv__ = lambda self, o: div(_coerce(o), self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, p: power(self, p)
Tensor.__matmul__ = lambda self, o: matmul(self, _coerce(o))
Tensor.__getitem__ = lambda self, idx: getitem(self, idx)
Tensor.sum = lambda self, axis=None, keepdims=False: reduce_sum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: reduce_mean(self, axis, keepdims)
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
