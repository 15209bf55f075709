"""Turn a NetworkSpec into a trainable module tree."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import ops
from ..errors import ArchitectureError
from ..neurons import NeuronKind, PrunableNeuronLayer, TrainableNeuronLayer
from ..nn import BatchNorm2d, Conv2d, Dense, Module
from ..tensor import Tensor
from .block import Edge, Node, OpKind, Series, out_width
from .network import N_STACKS, NetworkSpec, parameter_ledger


def make_neuron_layer(kind: str, channels: int, tl_scale: float = 10.0) -> Module:
    if kind == "trainable":
        return TrainableNeuronLayer(channels, tl_scale)
    if kind == "prunable":
        return PrunableNeuronLayer(channels)
    return PrunableNeuronLayer(channels, kinds=[NeuronKind(kind)] * channels)


class ConvOp(Module):
    """conv(K) -> batch norm -> neuron layer."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, neuron_layer: str,
                 rng: np.random.Generator, tl_scale: float = 10.0):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, kernel, stride, rng)
        self.bn = BatchNorm2d(c_out)
        self.neuron = make_neuron_layer(neuron_layer, c_out, tl_scale)

    def forward(self, x: Tensor) -> Tensor:
        return self.neuron(self.bn(self.conv(x)))


class NoneOp(Module):
    """Parameter-free shortcut; keeps the leading ``filters`` channels."""

    def __init__(self, filters: int):
        super().__init__()
        self.filters = filters

    def forward(self, x: Tensor) -> Tensor:
        return ops.slice_channels(x, self.filters)


class BlockModule(Module):
    def __init__(self, node: Node, in_width: int, neuron_layer: str,
                 rng: np.random.Generator, tl_scale: float, counter: list[int]):
        super().__init__()
        self.mode = type(node).__name__.lower()
        self.out_width = out_width(node, in_width)
        self.parts: list[Module] = []
        for child in node.children:
            if isinstance(child, Edge):
                idx = counter[0]
                counter[0] += 1
                if child.op is OpKind.NONE:
                    part: Module = NoneOp(child.filters)
                else:
                    part = ConvOp(in_width, child.filters, child.op.kernel, 1, neuron_layer, rng, tl_scale)
                self.add_module(f"edge{idx}", part)
            else:
                part = BlockModule(child, in_width, neuron_layer, rng, tl_scale, counter)
                # flatten so parameter names carry only the edge index
                for name, sub in part._children.items():
                    self.add_module(name, sub)
            self.parts.append(part)
            if isinstance(node, Series):
                in_width = out_width(child, in_width)

    def forward(self, x: Tensor) -> Tensor:
        if self.mode == "series":
            for p in self.parts:
                x = p(x)
            return x
        outs = [p(x) for p in self.parts]
        return ops.concat(outs, axis=1) if self.mode == "concat" else ops.add_n(outs)


class GrowthNetwork(Module):
    """Executable form of a NetworkSpec.  ``eta`` is its trainable-parameter count."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator, tl_scale: float = 10.0):
        super().__init__()
        self.spec = spec
        c_in = spec.input_shape[0]
        self.stem = Conv2d(c_in, spec.n_filters, 3, 1, rng)
        self.stages: list[Module] = []
        for s in range(N_STACKS):
            width = spec.stack_width(s)
            for b in range(spec.n_blocks):
                block = spec.blocks[s * spec.n_blocks + b]
                root = block.root if not isinstance(block.root, Edge) else Series((block.root,))
                module = BlockModule(root, width, spec.neuron_layer, rng, tl_scale, [0])
                self.add_module(f"stack{s}.block{b}", module)
                self.stages.append(module)
            reduce = ConvOp(width, 2 * width, 3, 2, spec.neuron_layer, rng, tl_scale)
            self.add_module(f"stack{s}.reduce", reduce)
            self.stages.append(reduce)
        self.classifier = Dense(spec.stack_width(N_STACKS), spec.num_classes, rng)
        self.eta = self.num_parameters()

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return self.classifier(ops.global_avg_pool(x))


def materialize(spec: NetworkSpec, seed: int = 0, tl_scale: float = 10.0,
                rng: Optional[np.random.Generator] = None) -> GrowthNetwork:
    """Validate ``spec`` and allocate its network.

    Raises ArchitectureError before any allocation when a junction's widths
    are inconsistent.
    """
    spec.validate()
    rng = rng if rng is not None else np.random.default_rng(seed)
    net = GrowthNetwork(spec, rng, tl_scale)
    expected = sum(i.count for i in parameter_ledger(spec))
    if net.eta != expected:
        raise ArchitectureError(f"materialized {net.eta} parameters, ledger says {expected}")
    return net
