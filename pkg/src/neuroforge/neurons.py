"""Max and coincidence neuron responses and the layers that host them.

Both responses take the neuron's own pre-activation ``x1`` and a second input
``x2``; inside a layer ``x2`` is the same activation shifted by one position
(one feature for dense layers, one row and one column for convolutions).
"""

from __future__ import annotations

import enum
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import ops
from .errors import ShapeError
from .nn import Module
from .tensor import Tensor


class NeuronKind(str, enum.Enum):
    CONVENTIONAL = "relu"
    MAX = "max"
    COINCIDENCE = "coincidence"


KIND_ORDER = (NeuronKind.CONVENTIONAL, NeuronKind.MAX, NeuronKind.COINCIDENCE)


def _same_shape(x1: Tensor, x2: Tensor, name: str) -> None:
    if x1.shape != x2.shape:
        raise ShapeError(f"{name}: input shapes differ, {x1.shape} vs {x2.shape}")


def coincidence_response(x1: Tensor, x2: Tensor) -> Tensor:
    """ReLU(x1) * ReLU(tanh(x2)): fires only when both inputs are positive."""
    _same_shape(x1, x2, "coincidence_response")
    return ops.mul(ops.relu(x1), ops.relu(ops.tanh_op(x2)))


def max_response(x1: Tensor, x2: Tensor) -> Tensor:
    """ReLU(x1) + ReLU(-x1) * ReLU(tanh(x2)): fires when either input is positive."""
    _same_shape(x1, x2, "max_response")
    gate = ops.relu(ops.tanh_op(x2))
    return ops.add(ops.relu(x1), ops.mul(ops.relu(ops.neg(x1)), gate))


def _layer_kind(x: Tensor, layer_kind: Optional[str]) -> str:
    if layer_kind is None:
        layer_kind = "conv" if x.ndim == 4 else "dense"
    expected = {"dense": 2, "conv": 4}
    if layer_kind not in expected:
        raise ValueError(f"layer_kind must be 'dense' or 'conv', got {layer_kind!r}")
    if x.ndim != expected[layer_kind]:
        raise ShapeError(f"{layer_kind} activations must be rank {expected[layer_kind]}, got shape {x.shape}")
    return layer_kind


def shift_second_input(x: Tensor, layer_kind: Optional[str] = None) -> Tensor:
    """Circularly shift activations by one position to form the second input.

    Dense activations [N, C] rotate along the feature axis; convolutional
    activations [N, C, H, W] rotate by one along both spatial axes.
    """
    return ops.roll(x, *_SHIFTS[_layer_kind(x, layer_kind)])


_SHIFTS = {"dense": (1, 1), "conv": ((1, 1), (2, 3))}


def largest_remainder(fractions: Sequence[float], total: int) -> list[int]:
    """Integer counts proportional to ``fractions`` that sum to ``total``.

    Fractions are normalized by their sum.  Leftover units go to the largest
    remainders; ties go to the lower index.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    fr = [Fraction(str(f)) if not isinstance(f, Fraction) else f for f in fractions]
    if any(f < 0 for f in fr) or sum(fr) <= 0:
        raise ValueError(f"fractions must be non-negative with a positive sum, got {fractions}")
    norm = sum(fr)
    quotas = [f * total / norm for f in fr]
    counts = [int(q) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(fr)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def assign_kinds(channels: int, fractions: Sequence[float] = (1, 1, 1)) -> tuple[NeuronKind, ...]:
    """Contiguous channel blocks ordered conventional, max, coincidence."""
    counts = largest_remainder(fractions, channels)
    kinds: list[NeuronKind] = []
    for kind, count in zip(KIND_ORDER, counts):
        kinds.extend([kind] * count)
    return tuple(kinds)


class TrainableNeuronLayer(Module):
    """Per-channel softmax mixture of the conventional, max and coincidence branches.

    ``weight`` has shape [3, C]; the mixture for channel c is
    ``softmax(scale * weight[:, c])``.  Weights start at zero, an even mixture.
    """

    def __init__(self, channels: int, scale: float = 10.0):
        super().__init__()
        self.channels = channels
        self.scale = scale
        self.weight = Tensor(np.zeros((3, channels), np.float32), requires_grad=True)

    def mixture(self) -> np.ndarray:
        z = self.scale * self.weight.data.astype(np.float64)
        e = np.exp(z - z.max(axis=0, keepdims=True))
        return e / e.sum(axis=0, keepdims=True)

    def forward(self, x: Tensor, layer_kind: Optional[str] = None) -> Tensor:
        return trainable_layer_forward(x, self, layer_kind)


def trainable_layer_forward(x: Tensor, layer: TrainableNeuronLayer,
                            layer_kind: Optional[str] = None) -> Tensor:
    kind = _layer_kind(x, layer_kind)
    if x.shape[1] != layer.channels:
        raise ShapeError(f"trainable layer has {layer.channels} channels, input has shape {x.shape}")
    mix = ops.softmax(ops.mul(layer.weight, layer.scale), axis=0)
    return ops.neuron_mix(x, mix, *_SHIFTS[kind])


class PrunableNeuronLayer(Module):
    """Hard channel-to-kind assignment with a pruning mask; no parameters."""

    def __init__(self, channels: int, fractions: Sequence[float] = (1, 1, 1),
                 kinds: Optional[Sequence[NeuronKind]] = None):
        super().__init__()
        self.channels = channels
        self.kinds = tuple(NeuronKind(k) for k in kinds) if kinds is not None else assign_kinds(channels, fractions)
        self.pruned = np.zeros(channels, dtype=bool)

    def selection(self) -> np.ndarray:
        """[3, C] one-hot kind indicator with pruned channels zeroed."""
        sel = np.zeros((3, self.channels), np.float32)
        sel[[KIND_ORDER.index(k) for k in self.kinds], np.arange(self.channels)] = 1
        sel[:, self.pruned] = 0
        return sel

    def kind_counts(self) -> dict[NeuronKind, int]:
        return {k: sum(1 for c in self.kinds if c == k) for k in KIND_ORDER}

    def forward(self, x: Tensor, layer_kind: Optional[str] = None) -> Tensor:
        return prunable_layer_forward(x, self, layer_kind)


def prunable_layer_forward(x: Tensor, layer: PrunableNeuronLayer,
                           layer_kind: Optional[str] = None) -> Tensor:
    kind = _layer_kind(x, layer_kind)
    if len(layer.kinds) != x.shape[1]:
        raise ShapeError(
            f"prunable layer assigns {len(layer.kinds)} channels, input has shape {x.shape}"
        )
    return ops.neuron_mix(x, Tensor(layer.selection()), *_SHIFTS[kind])
