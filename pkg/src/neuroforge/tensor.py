"""Reverse-mode differentiation core.

Every differentiable primitive produces a :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.  Nodes
carry a monotonically increasing creation index, so the forward order of any
subgraph is recovered by sorting on it and the backward pass simply walks that
order in reverse.  A node's gradient is therefore complete before its closure
runs: every consumer of a tensor was created after it.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DTYPE = np.float32

_sequence = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense array with an optional gradient buffer.

    ``data`` is stored as float32 unless a float64 array is passed in
    explicitly; the finite-difference harness relies on that escape hatch.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = np.float64 if arr.dtype == np.float64 else DTYPE
        self.data: np.ndarray = np.ascontiguousarray(arr, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._seq = next(_sequence)
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: Optional[np.ndarray] = None) -> "Graph":
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        graph = Graph.trace(self)
        graph.backward(grad)
        return graph

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Operator sugar; the implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.neg(as_tensor(other)))

    def __rsub__(self, other):
        from . import ops
        return ops.add(as_tensor(other), ops.neg(self))


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap a primitive's forward result, recording it only when needed."""
    out = Tensor(data, dtype=data.dtype if data.dtype == np.float64 else DTYPE)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


@dataclass
class Graph:
    """Forward-ordered list of the primitive nodes that produced ``root``."""

    root: Tensor
    nodes: list[Tensor]

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or node.is_leaf:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(root, nodes)

    def check_order(self) -> bool:
        """True when every input of a node is a leaf or precedes it."""
        position = {id(n): i for i, n in enumerate(self.nodes)}
        for i, node in enumerate(self.nodes):
            for parent in node._parents:
                if id(parent) in position and position[id(parent)] >= i:
                    return False
        return True

    def backward(self, grad: Optional[np.ndarray] = None) -> list[Tensor]:
        """Run the reverse sweep; returns nodes in the order they were visited."""
        root = self.root
        if grad is None:
            if root.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(root.data)
        _accumulate(root, np.asarray(grad, dtype=root.data.dtype))
        visited = []
        for node in reversed(self.nodes):
            visited.append(node)
            if node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is not None and parent.requires_grad:
                    _accumulate(parent, g)
        return visited


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.shape:
        raise ValueError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g
