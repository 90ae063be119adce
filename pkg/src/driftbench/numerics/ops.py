"""Differentiable primitives recorded on the active tape.

Every op returns a fresh :class:`Tensor`, refuses to produce non-finite
values, and, when a tape is active and any input is tracked, records a
backward closure.  Reductions accumulate in float64 and cast back to the
storage dtype.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from .tensor import ContractError, NonFiniteError, ShapeError, Tensor, current_tape

LOG_CLAMP = 1e-12


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    tape = current_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=tracked)
    if tracked:
        tape.record(op, inputs, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    data = a.data + b.data.astype(a.dtype, copy=False)
    return _result("add", data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape).astype(b.dtype)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    data = a.data - b.data.astype(a.dtype, copy=False)
    return _result("sub", data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape).astype(b.dtype)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    bd = b.data.astype(a.dtype, copy=False)
    data = a.data * bd
    return _result("mul", data, (a, b),
                   lambda g: (_unbroadcast(g * bd, a.shape),
                              _unbroadcast(g * a.data, b.shape).astype(b.dtype)))


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``c[i][j] = sum_p a[i][p] * b[p][j]`` for 2-D operands."""
    a, b = _binary_operands(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data.astype(a.dtype, copy=False)
    return _result("matmul", data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    data = np.asarray(a.data.sum(axis=axis, dtype=np.float64), dtype=a.dtype)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _result("sum", data, (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    data = np.asarray(a.data.mean(axis=axis, dtype=np.float64), dtype=a.dtype)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, a.shape) / n).astype(a.dtype),)

    return _result("mean", data, (a,), back)


def square(a: Tensor) -> Tensor:
    return _result("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _result("exp", data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    """Natural log with inputs clamped below at 1e-12."""
    clamped = np.maximum(a.data, LOG_CLAMP)
    return _result("log", np.log(clamped), (a,),
                   lambda g: (np.where(a.data > LOG_CLAMP, g / clamped, 0.0).astype(a.dtype),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z)))).astype(z.dtype)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _result("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _result("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def reshape(a: Tensor, shape) -> Tensor:
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    data = np.array(a.data[index])

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _result("getitem", data, (a,), back)


def _log_softmax(z: np.ndarray, axis: int) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True, dtype=np.float64))
    return (shifted - lse).astype(z.dtype)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = _log_softmax(a.data, axis)
    p = np.exp(out)
    return _result("log_softmax", out, (a,),
                   lambda g: (g - p * g.sum(axis=axis, keepdims=True, dtype=np.float64).astype(a.dtype),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    p = np.exp(_log_softmax(a.data, axis))

    def back(g):
        inner = (g * p).sum(axis=axis, keepdims=True, dtype=np.float64).astype(a.dtype)
        return (p * (g - inner),)

    return _result("softmax", p, (a,), back)


def weighted_softmax_xent(logits: Tensor, labels, class_weights) -> Tensor:
    """Mean over the batch of ``w[y] * -log softmax(logits)[y]``."""
    labels = np.asarray(labels, dtype=np.int64)
    weights = class_weights.data if isinstance(class_weights, Tensor) else np.asarray(class_weights)
    n_batch, n_classes = logits.shape
    if labels.shape != (n_batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f"label out of range [0, {n_classes})")
    if weights.shape != (n_classes,):
        raise ShapeError(f"class_weights shape {weights.shape} does not match {n_classes} classes")
    logp = _log_softmax(logits.data, axis=1)
    rows = np.arange(n_batch)
    w = weights[labels].astype(np.float64)
    loss = -(w * logp[rows, labels].astype(np.float64)).sum() / n_batch
    data = np.asarray(loss, dtype=logits.dtype)

    def back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        d *= (w / n_batch)[:, None].astype(logits.dtype)
        return (g * d,)

    return _result("weighted_softmax_xent", data, (logits,), back)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = ((rng.random(a.shape) >= rate) / (1.0 - rate)).astype(a.dtype)
    return _result("dropout", a.data * mask, (a,), lambda g: (g * mask,))


def lstm_layer(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> Tensor:
    """One LSTM layer over ``x[B, T, D]``; returns all hidden states ``[B, T, S]``."""
    if x.ndim != 3 or x.shape[2] != w_x.shape[0]:
        raise ShapeError(f"lstm input {x.shape} incompatible with w_x {w_x.shape}")
    size = w_h.shape[0]
    if w_x.shape[1] != 4 * size or w_h.shape != (size, 4 * size) or b.shape != (4 * size,):
        raise ShapeError(f"lstm weights inconsistent: w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}")
    xd = np.ascontiguousarray(x.data, dtype=w_h.dtype)
    hs, gates, cs = _kernels.lstm_forward(xd, w_x.data, w_h.data, b.data)

    def back(g):
        dx, dw_x, dw_h, db = _kernels.lstm_backward(
            np.ascontiguousarray(g), xd, w_x.data, w_h.data, hs, gates, cs)
        return dx.astype(x.dtype, copy=False), dw_x, dw_h, db

    return _result("lstm_layer", hs, (x, w_x, w_h, b), back)


def quadratic_penalty(theta: Tensor, center, weight) -> Tensor:
    """``sum(weight * (theta - center)**2)`` with constant center and weight."""
    c = center.data if isinstance(center, Tensor) else np.asarray(center)
    w = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
    if c.shape != theta.shape or w.shape != theta.shape:
        raise ShapeError(f"penalty shapes differ: theta {theta.shape}, center {c.shape}, weight {w.shape}")
    diff = theta.data.astype(np.float64) - c
    data = np.asarray((w * diff * diff).sum(dtype=np.float64), dtype=theta.dtype)
    return _result("quadratic_penalty", data, (theta,),
                   lambda g: ((2.0 * g * w * diff).astype(theta.dtype),))
