"""Search-block graphs and the two growth procedures.

A block is a series-parallel DAG.  Rather than storing junctions and edges
explicitly, it is kept as an expression tree: an :class:`Edge` is one
operation, :class:`Series` chains children, :class:`Concat` runs children on
the same input and concatenates their channels, and :class:`Add` runs children
on the same input and sums them.  Every DAG that Branching and Splitting can
produce from a single edge is of this form, and the tree form makes the
channel bookkeeping local.

Edges are addressed by their index in a depth-first, left-to-right walk.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from ..errors import ArchitectureError, GrowthRejected


class OpKind(str, enum.Enum):
    CONV1X1 = "conv1x1"
    CONV3X3 = "conv3x3"
    CONV5X5 = "conv5x5"
    CONV7X7 = "conv7x7"
    NONE = "none"

    @property
    def kernel(self) -> int:
        return {"conv1x1": 1, "conv3x3": 3, "conv5x5": 5, "conv7x7": 7, "none": 0}[self.value]

    @property
    def has_params(self) -> bool:
        return self is not OpKind.NONE


ALL_OPS = tuple(OpKind)


@dataclass(frozen=True)
class Edge:
    op: OpKind
    filters: int


@dataclass(frozen=True)
class Series:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Concat:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Add:
    children: tuple["Node", ...]


Node = Union[Edge, Series, Concat, Add]


def iter_edges(node: Node) -> Iterator[Edge]:
    if isinstance(node, Edge):
        yield node
    else:
        for child in node.children:
            yield from iter_edges(child)


def out_width(node: Node, in_width: int) -> int:
    """Output channel count, validating every junction on the way."""
    if isinstance(node, Edge):
        if node.filters < 1:
            raise ArchitectureError(f"edge {node} has no filters")
        if node.op is OpKind.NONE and node.filters > in_width:
            raise ArchitectureError(
                f"none-op cannot widen {in_width} channels to {node.filters}"
            )
        return node.filters
    if not node.children:
        raise ArchitectureError(f"empty {type(node).__name__} junction")
    if isinstance(node, Series):
        w = in_width
        for child in node.children:
            w = out_width(child, w)
        return w
    widths = [out_width(child, in_width) for child in node.children]
    if isinstance(node, Concat):
        return sum(widths)
    if len(set(widths)) != 1:
        raise ArchitectureError(f"add junction receives unequal widths {widths}")
    return widths[0]


def height(node: Node) -> int:
    """Longest input-to-output path counted in parameterized operations."""
    if isinstance(node, Edge):
        return 1 if node.op.has_params else 0
    if isinstance(node, Series):
        return sum(height(c) for c in node.children)
    return max(height(c) for c in node.children)


def edge_heights(node: Node, start: int = 0) -> list[tuple[Edge, int]]:
    """Each parameterized edge paired with its height (1 = first op level).

    An edge's height is one more than the longest op path leading into it.
    """
    found: list[tuple[Edge, int]] = []

    def walk(n: Node, depth: int) -> int:
        if isinstance(n, Edge):
            if n.op.has_params:
                found.append((n, depth + 1))
                return depth + 1
            return depth
        if isinstance(n, Series):
            for c in n.children:
                depth = walk(c, depth)
            return depth
        return max(walk(c, depth) for c in n.children)

    walk(node, start)
    return found


def width_profile(node: Node) -> dict[int, int]:
    """Total filters of parameterized edges at each height."""
    profile: dict[int, int] = {}
    for e, h in edge_heights(node):
        profile[h] = profile.get(h, 0) + e.filters
    return profile


@dataclass(frozen=True)
class BlockGraph:
    """One search block; ``channels`` is the block's input and output width."""

    root: Node
    channels: int

    @classmethod
    def single(cls, channels: int, op: OpKind = OpKind.CONV3X3) -> "BlockGraph":
        return cls(Edge(op, channels), channels)

    def validate(self) -> None:
        w = out_width(self.root, self.channels)
        if w != self.channels:
            raise ArchitectureError(f"block maps {self.channels} channels to {w}")

    def edges(self) -> list[Edge]:
        return list(iter_edges(self.root))

    @property
    def num_ops(self) -> int:
        return sum(1 for _ in iter_edges(self.root))

    @property
    def height(self) -> int:
        return height(self.root)

    def width(self) -> float:
        """Largest same-height filter total, normalized to the block width."""
        profile = width_profile(self.root)
        return max(profile.values()) / self.channels if profile else 0.0

    def to_json(self) -> dict:
        return {"channels": self.channels, "root": node_to_json(self.root)}

    @classmethod
    def from_json(cls, obj: dict) -> "BlockGraph":
        graph = cls(node_from_json(obj["root"]), int(obj["channels"]))
        graph.validate()
        return graph


def node_to_json(node: Node) -> dict:
    if isinstance(node, Edge):
        return {"type": "edge", "op": node.op.value, "filters": node.filters}
    kind = {Series: "series", Concat: "concat", Add: "add"}[type(node)]
    return {"type": kind, "children": [node_to_json(c) for c in node.children]}


def node_from_json(obj: dict) -> Node:
    kind = obj.get("type")
    if kind == "edge":
        return Edge(OpKind(obj["op"]), int(obj["filters"]))
    cls = {"series": Series, "concat": Concat, "add": Add}.get(kind)
    if cls is None:
        raise ArchitectureError(f"unknown block node type {kind!r}")
    return cls(tuple(node_from_json(c) for c in obj["children"]))


# --------------------------------------------------------------------------
# growth procedures


def _replace_edge(node: Node, target: int, fn, counter: list[int]) -> Node:
    """Rebuild ``node`` with edge number ``target`` transformed by ``fn``.

    ``fn(edge, parent)`` returns the replacement children list for that edge
    within ``parent`` (the immediate container, or None at the root).
    """
    if isinstance(node, Edge):
        raise AssertionError("edges are rewritten by their parent")
    children: list[Node] = []
    for child in node.children:
        if isinstance(child, Edge):
            idx = counter[0]
            counter[0] += 1
            if idx == target:
                children.extend(fn(child, node))
            else:
                children.append(child)
        else:
            children.append(_replace_edge(child, target, fn, counter))
    return type(node)(tuple(children))


def _rewrite(graph: BlockGraph, edge: int, fn) -> BlockGraph:
    n = graph.num_ops
    if not 0 <= edge < n:
        raise ArchitectureError(f"edge index {edge} out of range for a block with {n} ops")
    if isinstance(graph.root, Edge):
        replacement = fn(graph.root, None)
        root = replacement[0] if len(replacement) == 1 else Series(tuple(replacement))
    else:
        root = _replace_edge(graph.root, edge, fn, [0])
    new = BlockGraph(_normalize(root), graph.channels)
    new.validate()
    return new


def _normalize(node: Node) -> Node:
    """Collapse single-child junctions and merge nested same-kind containers."""
    if isinstance(node, Edge):
        return node
    flat: list[Node] = []
    for child in node.children:
        child = _normalize(child)
        if type(child) is type(node) and not isinstance(node, Concat):
            flat.extend(child.children)
        else:
            flat.append(child)
    if len(flat) == 1:
        return flat[0]
    return type(node)(tuple(flat))


def random_op(rng: np.random.Generator) -> OpKind:
    return ALL_OPS[int(rng.integers(len(ALL_OPS)))]


def branching(graph: BlockGraph, edge: int, rng: Optional[np.random.Generator] = None,
              ops: Optional[tuple[OpKind, OpKind]] = None) -> BlockGraph:
    """Deepen the path through ``edge``.

    The edge is kept and followed by two parallel random operations holding
    ceil(F/2) and floor(F/2) filters whose outputs are concatenated back to F.
    """
    target = graph.edges()[edge] if 0 <= edge < graph.num_ops else None
    if target is not None and target.filters < 2:
        raise GrowthRejected(f"cannot branch an edge with {target.filters} filter")
    if ops is None:
        ops = (random_op(rng), random_op(rng))

    def fn(e: Edge, parent):
        f = e.filters
        pair = Concat((Edge(ops[0], (f + 1) // 2), Edge(ops[1], f // 2)))
        if isinstance(parent, Series):
            return [e, pair]
        return [Series((e, pair))]

    return _rewrite(graph, edge, fn)


def splitting(graph: BlockGraph, edge: int, rng: Optional[np.random.Generator] = None,
              op: Optional[OpKind] = None) -> BlockGraph:
    """Widen the path through ``edge`` with a parallel random operation.

    The duplicate shares the edge's input and output junctions and carries the
    same filter count; the shared output sums the parallel paths.
    """
    if op is None:
        op = random_op(rng)

    def fn(e: Edge, parent):
        twin = Edge(op, e.filters)
        if isinstance(parent, Add):
            return [e, twin]
        return [Add((e, twin))]

    return _rewrite(graph, edge, fn)


def random_growth(graph: BlockGraph, rng: np.random.Generator) -> BlockGraph:
    """One uniformly chosen procedure on a uniformly chosen edge.

    A branching that cannot split its edge's filters falls back to splitting.
    """
    edge = int(rng.integers(graph.num_ops))
    if rng.integers(2) == 0:
        try:
            return branching(graph, edge, rng)
        except GrowthRejected:
            pass
    return splitting(graph, edge, rng)
