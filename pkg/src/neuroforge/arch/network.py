"""Whole-network descriptions for the growth search.

Layout: a 3x3 stem convolution, then three stacks of ``n_blocks`` search
blocks each followed by a reduction layer (3x3 stride-2 convolution doubling
the width), then global average pooling and a linear classifier.  Stack ``s``
runs at ``n_filters * 2**s`` channels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import ArchitectureError
from .block import ALL_OPS, BlockGraph, Concat, Edge, Node, OpKind, Series, random_growth

N_STACKS = 3
SCHEMA_VERSION = 1
NEURON_LAYERS = ("trainable", "prunable", "relu", "max", "coincidence")


@dataclass(frozen=True)
class NetworkSpec:
    n_filters: int
    n_blocks: int
    blocks: tuple[BlockGraph, ...]
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (3, 32, 32)
    neuron_layer: str = "trainable"

    def __post_init__(self):
        if self.n_filters < 1 or self.n_blocks < 1 or self.num_classes < 2:
            raise ArchitectureError(
                f"invalid sizes N_F={self.n_filters} N_B={self.n_blocks} classes={self.num_classes}"
            )
        if len(self.blocks) != N_STACKS * self.n_blocks:
            raise ArchitectureError(
                f"expected {N_STACKS * self.n_blocks} blocks, got {len(self.blocks)}"
            )
        if self.neuron_layer not in NEURON_LAYERS:
            raise ArchitectureError(f"unknown neuron layer {self.neuron_layer!r}")

    def stack_width(self, stack: int) -> int:
        return self.n_filters * 2 ** stack

    def stack_of(self, block_index: int) -> int:
        return block_index // self.n_blocks

    def validate(self) -> None:
        for i, block in enumerate(self.blocks):
            if block.channels != self.stack_width(self.stack_of(i)):
                raise ArchitectureError(
                    f"block {i} has width {block.channels}, stack expects "
                    f"{self.stack_width(self.stack_of(i))}"
                )
            block.validate()

    @property
    def num_ops(self) -> int:
        return sum(b.num_ops for b in self.blocks)

    def to_json(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "kind": "growth",
            "n_filters": self.n_filters,
            "n_blocks": self.n_blocks,
            "n_stacks": N_STACKS,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "neuron_layer": self.neuron_layer,
            "blocks": [b.to_json() for b in self.blocks],
        }

    def dumps(self) -> str:
        return canonical_json(self.to_json())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkSpec":
        if obj.get("version") != SCHEMA_VERSION or obj.get("kind", "growth") != "growth":
            raise ArchitectureError(f"unsupported network document version/kind: {obj.get('version')}, {obj.get('kind')}")
        spec = cls(
            n_filters=int(obj["n_filters"]),
            n_blocks=int(obj["n_blocks"]),
            blocks=tuple(BlockGraph.from_json(b) for b in obj["blocks"]),
            num_classes=int(obj["num_classes"]),
            input_shape=tuple(int(v) for v in obj["input_shape"]),
            neuron_layer=obj.get("neuron_layer", "trainable"),
        )
        spec.validate()
        return spec

    @classmethod
    def loads(cls, text: str) -> "NetworkSpec":
        return cls.from_json(json.loads(text))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def baseline_spec(n_filters: int, n_blocks: int, num_classes: int = 10,
                  input_shape=(3, 32, 32), neuron_layer: str = "trainable") -> NetworkSpec:
    """Every search block a single 3x3 op."""
    blocks = tuple(
        BlockGraph.single(n_filters * 2 ** (i // n_blocks)) for i in range(N_STACKS * n_blocks)
    )
    return NetworkSpec(n_filters, n_blocks, blocks, num_classes, tuple(input_shape), neuron_layer)


def random_model(n_growth_init: int, rng: np.random.Generator, *, n_filters: int = 16,
                 n_blocks: int = 3, num_classes: int = 10, input_shape=(3, 32, 32),
                 neuron_layer: str = "trainable") -> NetworkSpec:
    """Independent random blocks, each grown by up to ``n_growth_init`` procedures."""
    if n_growth_init < 0:
        raise ValueError("n_growth_init must be non-negative")
    spec = baseline_spec(n_filters, n_blocks, num_classes, input_shape, neuron_layer)
    blocks = []
    for block in spec.blocks:
        for _ in range(int(rng.integers(n_growth_init + 1))):
            block = random_growth(block, rng)
        blocks.append(block)
    return replace(spec, blocks=tuple(blocks))


def grow(spec: NetworkSpec, n_blocks_search: int, n_growth_search: int,
         rng: np.random.Generator) -> NetworkSpec:
    """Child spec with ``n_growth_search`` procedures on each of ``n_blocks_search`` blocks."""
    if not 1 <= n_blocks_search <= len(spec.blocks):
        raise ValueError(f"n_blocks_search must lie in [1, {len(spec.blocks)}]")
    chosen = rng.choice(len(spec.blocks), size=n_blocks_search, replace=False)
    blocks = list(spec.blocks)
    for i in sorted(int(c) for c in chosen):
        for _ in range(n_growth_search):
            blocks[i] = random_growth(blocks[i], rng)
    return replace(spec, blocks=tuple(blocks))


# --------------------------------------------------------------------------
# statistics


@dataclass
class StackStats:
    stack: int
    height: int
    width: float
    op_histogram: dict[str, int] = field(default_factory=dict)


def structure_stats(spec: NetworkSpec) -> list[StackStats]:
    """Per-stack height, width and operation histogram.

    A stack's height is the sum of its blocks' heights (blocks run in series);
    its width is the widest of its blocks.  The histogram counts parameterized
    operations by kernel size.
    """
    out = []
    for s in range(N_STACKS):
        blocks = spec.blocks[s * spec.n_blocks:(s + 1) * spec.n_blocks]
        hist = {op.value: 0 for op in ALL_OPS if op.has_params}
        for b in blocks:
            for e in b.edges():
                if e.op.has_params:
                    hist[e.op.value] += 1
        out.append(StackStats(s, sum(b.height for b in blocks), max(b.width() for b in blocks), hist))
    return out


# --------------------------------------------------------------------------
# parameter ledger


@dataclass(frozen=True)
class LedgerItem:
    name: str
    category: str  # conv | batch_norm | neuron | classifier
    count: int


def edge_inputs(node: Node, in_width: int) -> list[tuple[Edge, int]]:
    """Every edge with the channel count it consumes, in edge-index order."""
    found: list[tuple[Edge, int]] = []

    def walk(n: Node, w: int) -> int:
        if isinstance(n, Edge):
            found.append((n, w))
            return n.filters
        if isinstance(n, Series):
            for c in n.children:
                w = walk(c, w)
            return w
        widths = [walk(c, w) for c in n.children]
        return sum(widths) if isinstance(n, Concat) else widths[0]

    walk(node, in_width)
    return found


def _op_items(prefix: str, c_in: int, c_out: int, kernel: int, neuron_layer: str) -> list[LedgerItem]:
    items = [
        LedgerItem(f"{prefix}.conv.weight", "conv", c_in * c_out * kernel * kernel),
        LedgerItem(f"{prefix}.bn.gamma", "batch_norm", c_out),
        LedgerItem(f"{prefix}.bn.beta", "batch_norm", c_out),
    ]
    if neuron_layer == "trainable":
        items.append(LedgerItem(f"{prefix}.neuron.weight", "neuron", 3 * c_out))
    return items


def parameter_ledger(spec: NetworkSpec) -> list[LedgerItem]:
    """Itemized trainable-parameter counts, named like the materialized network."""
    spec.validate()
    c_in = spec.input_shape[0]
    items = [LedgerItem("stem.weight", "conv", c_in * spec.n_filters * 9)]
    for s in range(N_STACKS):
        width = spec.stack_width(s)
        for b in range(spec.n_blocks):
            block = spec.blocks[s * spec.n_blocks + b]
            for i, (edge, w_in) in enumerate(edge_inputs(block.root, width)):
                if edge.op.has_params:
                    items.extend(_op_items(f"stack{s}.block{b}.edge{i}", w_in, edge.filters,
                                           edge.op.kernel, spec.neuron_layer))
        items.extend(_op_items(f"stack{s}.reduce", width, 2 * width, 3, spec.neuron_layer))
    final = spec.stack_width(N_STACKS)
    items.append(LedgerItem("classifier.weight", "classifier", final * spec.num_classes))
    items.append(LedgerItem("classifier.bias", "classifier", spec.num_classes))
    return items


def parameter_count(spec: NetworkSpec) -> int:
    return sum(item.count for item in parameter_ledger(spec))


def conv_cost(spec: NetworkSpec) -> int:
    """Sum of n_in * n_out * K^2 over every convolution."""
    return sum(i.count for i in parameter_ledger(spec) if i.category == "conv")


__all__ = [
    "NetworkSpec", "baseline_spec", "random_model", "grow", "structure_stats", "StackStats",
    "parameter_ledger", "parameter_count", "conv_cost", "LedgerItem", "canonical_json",
    "edge_inputs", "N_STACKS", "OpKind",
]
