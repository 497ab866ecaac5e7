"""Dense float64 tensors and the reverse-mode tape they record onto."""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import ContractViolation


class Tensor:
    """A dense n-dimensional float64 array, optionally tracked for gradients.

    ``grad`` accumulates additively across fan-out during a backward pass and
    stays ``None`` until the tensor participates in one. All numerics are
    double precision; inputs of other dtypes are converted on construction.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic operators are attached by nfs.gradcore.ops at import time.


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Trainable leaf. With ``rng`` and ``scale``, samples uniform(+-scale)."""
    if rng is not None:
        data = rng.uniform(-scale, scale, size=data)
    return Tensor(data, requires_grad=True)


class Tape:
    """Execution-ordered record of primitive applications.

    The record order is a topological order of the data-flow graph because an
    operation can only execute after its inputs exist. A tape supports one
    backward pass per recording; ``reset()`` clears it for reuse.
    """

    def __init__(self):
        self._entries: list[tuple[tuple[Tensor, ...], callable]] = []
        self._spent = False

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, outputs: tuple[Tensor, ...], backward_fn) -> None:
        self._entries.append((outputs, backward_fn))

    def reset(self) -> None:
        self._entries.clear()
        self._spent = False

    def backward(self, root: Tensor, leaves: list[Tensor] | None = None):
        """Accumulate d(root)/d(leaf) into every participating leaf's ``grad``.

        ``root`` must be scalar and produced by this recording. Leaves passed
        explicitly get a zero gradient when they did not participate. Returns
        the list of leaf gradients when ``leaves`` is given.
        """
        if self._spent:
            raise ContractViolation("tape already consumed by a backward pass; reset() first")
        if not self._entries:
            raise ContractViolation("backward on an empty tape")
        if root.data.size != 1:
            raise ContractViolation(f"backward root must be scalar, got shape {root.data.shape}")
        self._spent = True
        root.grad = np.ones_like(root.data)
        for outputs, backward_fn in reversed(self._entries):
            grads = [o.grad for o in outputs]
            if all(g is None for g in grads):
                continue
            grads = [g if g is not None else np.zeros_like(o.data) for g, o in zip(grads, outputs)]
            backward_fn(*grads)
        if leaves is not None:
            out = []
            for leaf in leaves:
                if leaf.grad is None:
                    leaf.grad = np.zeros_like(leaf.data)
                out.append(leaf.grad)
            return out
        return None


_STATE = threading.local()


def active_tape() -> Tape | None:
    stack = getattr(_STATE, "stack", None)
    return stack[-1] if stack else None


@contextmanager
def recording(tape: Tape | None = None):
    """Activate a tape for the duration of the block. Tapes nest as a stack."""
    if tape is None:
        tape = Tape()
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()
