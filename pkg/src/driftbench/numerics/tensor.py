"""Tensor container, the recording tape and reverse-mode backward."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A caller broke an operation's precondition."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


_dtype_stack: list[type] = [np.float32]


def default_dtype() -> np.dtype:
    return np.dtype(_dtype_stack[-1])


@contextlib.contextmanager
def precision(mode: str):
    """Temporarily switch the storage dtype of newly created tensors.

    ``"single"`` is the training default; ``"double"`` is the verification
    mode used for finite-difference gradient checks.
    """
    dtypes = {"single": np.float32, "double": np.float64}
    if mode not in dtypes:
        raise ValueError(f"unknown precision {mode!r}; expected 'single' or 'double'")
    _dtype_stack.append(dtypes[mode])
    try:
        yield
    finally:
        _dtype_stack.pop()


class Tensor:
    """Dense row-major real array, optionally tracked for differentiation.

    Leaf tensors created with ``requires_grad=True`` are parameters.  Outputs
    of operations recorded on an active :class:`Tape` are tracked
    automatically.  Element-wise equality is deliberately not overloaded so
    tensors hash by identity.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype if dtype is not None else default_dtype())
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor shape must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = requires_grad
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        if not np.isscalar(other):
            return NotImplemented
        from . import ops
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis=axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis=axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; operations executed inside the block on tracked
    tensors are appended in execution order, which is a topological order.
    """

    nodes: list[Node] = field(default_factory=list)
    _outputs: set[int] = field(default_factory=set, repr=False)

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.pop()

    def record(self, op: str, inputs: Iterable[Tensor], output: Tensor, backward) -> None:
        self.nodes.append(Node(op, tuple(inputs), output, backward))
        self._outputs.add(id(output))

    def is_leaf(self, t: Tensor) -> bool:
        return id(t) not in self._outputs

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        grads = backward(self, loss, params)
        return [grads[p] for p in params]


_tape_stack: list[Tape] = []


def current_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep over ``tape`` from the scalar ``loss``.

    Returns ``{leaf: gradient}`` for every differentiable leaf reached, plus a
    zero gradient for any entry of ``params`` the loss does not depend on.
    Parameters are never modified.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if tape.is_leaf(loss) and loss.requires_grad:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
            if key not in leaves and tape.is_leaf(t):
                leaves[key] = t
    out = {t: grads[k] for k, t in leaves.items()}
    if params is not None:
        for p in params:
            if p not in out:
                out[p] = np.zeros_like(p.data)
    return out
