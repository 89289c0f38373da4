"""Tensor container and reverse-mode tape."""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError

_grad_enabled = True
_node_ids = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Disable recording of operations inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One recorded operation: its inputs, its output and the rule mapping
    the output gradient to one gradient per input (``None`` for inputs that
    do not need one).

    Which inputs want a gradient is fixed when the operation is recorded, so
    parameters frozen during the forward pass stay frozen in backward.
    """

    __slots__ = ("id", "name", "inputs", "needs_grad", "backward")

    def __init__(self, name: str, inputs: Sequence["Tensor"], backward: Callable):
        self.id = next(_node_ids)
        self.name = name
        self.inputs = tuple(inputs)
        self.needs_grad = tuple(t.requires_grad for t in self.inputs)
        self.backward = backward

    def __repr__(self):
        return f"Node({self.id}, {self.name})"


class Tensor:
    """N-dimensional float array with an optional gradient buffer.

    Leaves created by the user carry ``requires_grad``; results of recorded
    operations carry a ``node`` pointing back into the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        """Flat view of the buffer."""
        return self.data.reshape(-1)

    @property
    def node_id(self) -> Optional[int]:
        return None if self.node is None else self.node.id

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar, defined in ops to avoid a cycle
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __mul__(self, other):
        from .ops import scale
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def record(name: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` and attach a tape node when any input needs gradients."""
    out = Tensor(out_data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(name, inputs, backward_fn)
    return out


class Tape:
    """Operations reachable from an output, in topological order."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        if out.node is None:
            return cls([])
        order = []
        seen = set()
        # iterative post-order DFS; recursion would overflow on long graphs
        stack = [(out.node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for t in node.inputs:
                if t.node is not None and t.node.id not in seen:
                    stack.append((t.node, False))
        return cls(order)

    def replay(self, out: Tensor, seed: np.ndarray):
        """Propagate ``seed`` (d loss / d out) backward; accumulate into leaves."""
        grads = {out.node.id: seed}
        for node in reversed(self.nodes):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            input_grads = node.backward(g)
            for t, needs, gi in zip(node.inputs, node.needs_grad, input_grads):
                if gi is None or not needs:
                    continue
                if t.node is None:
                    if t.grad is None:
                        t.grad = np.array(gi, dtype=t.data.dtype, copy=True)
                    else:
                        t.grad += gi
                else:
                    prev = grads.get(t.node.id)
                    grads[t.node.id] = gi if prev is None else prev + gi


def backward(loss: Tensor):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
        return
    Tape.from_output(loss).replay(loss, np.ones_like(loss.data))
