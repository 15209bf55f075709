"""Pre-activation ResNets with prunable neuron layers, and the SP-ResNet variant.

Each op is batch norm -> prunable neuron layer -> convolution.  A residual
block holds two ops plus a shortcut.  The first block of every stack after
the first halves the resolution (stride 2 in its first op) and widens to the
stack's filter count; its shortcut is a 1x1 stride-2 projection.  All other
shortcuts are identities.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import ops
from ..arch.network import LedgerItem, canonical_json
from ..errors import ArchitectureError
from ..neurons import PrunableNeuronLayer, largest_remainder
from ..nn import BatchNorm2d, Conv2d, Dense, Module
from ..tensor import Tensor

KERNELS = (1, 3, 5, 7)
SCHEMA_VERSION = 1
EQUAL_THIRDS = (1 / 3, 1 / 3, 1 / 3)
ALL_3X3 = (0.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class ResNetSpec:
    """Per-stack block counts, widths, kernel-size mix and neuron-kind mix.

    ``op_fractions[s]`` weights kernel sizes (1, 3, 5, 7) for the conv layers of
    stack ``s``; ``neuron_fractions[s]`` weights (relu, max, coincidence) for
    its prunable layers.  Each must sum to 1 within 1e-9.
    """

    blocks: tuple[int, ...]
    stack_filters: tuple[int, ...]
    op_fractions: tuple[tuple[float, ...], ...] = (ALL_3X3,) * 3
    neuron_fractions: tuple[tuple[float, ...], ...] = (EQUAL_THIRDS,) * 3
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (3, 32, 32)

    def __post_init__(self):
        n = len(self.blocks)
        if n == 0 or len(self.stack_filters) != n:
            raise ArchitectureError("blocks and stack_filters must be non-empty and equally long")
        if len(self.op_fractions) != n or len(self.neuron_fractions) != n:
            raise ArchitectureError("one op-fraction and one neuron-fraction row per stack required")
        if min(self.blocks) < 1 or min(self.stack_filters) < 1 or self.num_classes < 2:
            raise ArchitectureError("block counts, widths and class count must be positive")
        if any(b > a for a, b in zip(self.stack_filters[1:], self.stack_filters)):
            raise ArchitectureError(f"stack widths must be non-decreasing, got {self.stack_filters}")
        for name, rows, size in (("op", self.op_fractions, 4), ("neuron", self.neuron_fractions, 3)):
            for s, row in enumerate(rows):
                if len(row) != size or min(row) < 0 or abs(sum(row) - 1) > 1e-9:
                    raise ArchitectureError(
                        f"stack {s} {name} fractions {tuple(row)} must be {size} non-negative values summing to 1"
                    )

    @property
    def n_stacks(self) -> int:
        return len(self.blocks)

    def conv_layers(self, stack: int) -> int:
        return 2 * self.blocks[stack]

    def stack_kernels(self, stack: int) -> list[int]:
        """Kernel size of each conv layer in the stack, largest kernels first."""
        counts = largest_remainder(self.op_fractions[stack], self.conv_layers(stack))
        out: list[int] = []
        for k, c in sorted(zip(KERNELS, counts), reverse=True):
            out.extend([k] * c)
        return out

    def neuron_counts(self, stack: int, channels: int) -> list[int]:
        return largest_remainder(self.neuron_fractions[stack], channels)

    def to_json(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "kind": "resnet",
            "blocks": list(self.blocks),
            "stack_filters": list(self.stack_filters),
            "op_fractions": [list(r) for r in self.op_fractions],
            "neuron_fractions": [list(r) for r in self.neuron_fractions],
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
        }

    def dumps(self) -> str:
        return canonical_json(self.to_json())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, obj: dict) -> "ResNetSpec":
        if obj.get("version") != SCHEMA_VERSION or obj.get("kind") != "resnet":
            raise ArchitectureError(f"unsupported resnet document version/kind: {obj.get('version')}, {obj.get('kind')}")
        return cls(
            blocks=tuple(int(v) for v in obj["blocks"]),
            stack_filters=tuple(int(v) for v in obj["stack_filters"]),
            op_fractions=tuple(tuple(float(v) for v in r) for r in obj["op_fractions"]),
            neuron_fractions=tuple(tuple(float(v) for v in r) for r in obj["neuron_fractions"]),
            num_classes=int(obj["num_classes"]),
            input_shape=tuple(int(v) for v in obj["input_shape"]),
        )

    @classmethod
    def loads(cls, text: str) -> "ResNetSpec":
        return cls.from_json(json.loads(text))


def resnet_spec(n_blocks: int, n_filters: int, num_classes: int = 10,
                input_shape=(3, 32, 32)) -> ResNetSpec:
    """Baseline: ``n_blocks`` per stack at widths N_F, 2N_F, 4N_F, all 3x3, equal thirds."""
    return ResNetSpec((n_blocks,) * 3, (n_filters, 2 * n_filters, 4 * n_filters),
                      num_classes=num_classes, input_shape=tuple(input_shape))


SP_BLOCKS = (3, 4, 2)
SP_FILTERS = (48, 96, 144)
SP_OP_FRACTIONS = ((0.2, 0.4, 0.2, 0.2), (0.2, 0.5, 0.2, 0.1), (0.3, 0.7, 0.0, 0.0))
SP_NEURON_FRACTIONS = ((0.45, 0.40, 0.15), (0.35, 0.40, 0.20), (0.30, 0.45, 0.25))


def _normalized(row: Sequence[float]) -> tuple[float, ...]:
    total = sum(row)
    return tuple(v / total for v in row)


def build_sp_resnet(base: Optional[ResNetSpec] = None) -> ResNetSpec:
    """Signal-processing ResNet derived from the 3-48 baseline.

    Stacks get 3, 4 and 2 blocks (6, 8, 4 conv layers) at widths 48, 96, 144,
    per-stack kernel mixes and per-stack neuron-kind mixes.  The second
    stack's neuron mix (0.35, 0.40, 0.20) sums to 0.95 and is renormalized.
    """
    base = base if base is not None else resnet_spec(3, 48)
    if base.blocks != (3, 3, 3) or base.stack_filters != (48, 96, 192):
        raise ArchitectureError(
            f"SP-ResNet derives from the 3-48 baseline, got blocks {base.blocks} widths {base.stack_filters}"
        )
    return ResNetSpec(SP_BLOCKS, SP_FILTERS, SP_OP_FRACTIONS,
                      tuple(_normalized(r) for r in SP_NEURON_FRACTIONS),
                      base.num_classes, base.input_shape)


# --------------------------------------------------------------------------
# modules


class PreActOp(Module):
    """batch norm -> prunable neuron layer -> convolution."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 fractions: Sequence[float], rng: np.random.Generator):
        super().__init__()
        self.bn = BatchNorm2d(c_in)
        self.neuron = PrunableNeuronLayer(c_in, fractions)
        self.conv = Conv2d(c_in, c_out, kernel, stride, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(self.neuron(self.bn(x)))


class ResidualBlock(Module):
    def __init__(self, c_in: int, c_out: int, kernels: tuple[int, int], stride: int,
                 fractions: Sequence[float], rng: np.random.Generator):
        super().__init__()
        self.op1 = PreActOp(c_in, c_out, kernels[0], stride, fractions, rng)
        self.op2 = PreActOp(c_out, c_out, kernels[1], 1, fractions, rng)
        self.shortcut = Conv2d(c_in, c_out, 1, stride, rng) if (c_in != c_out or stride != 1) else None

    def forward(self, x: Tensor) -> Tensor:
        skip = self.shortcut(x) if self.shortcut is not None else x
        return ops.add(self.op2(self.op1(x)), skip)


@dataclass(frozen=True)
class NeuronLayerRef:
    """One prunable layer and the convolution whose output it consumes."""

    index: int
    name: str
    stack: int
    block: int
    op: int
    layer: PrunableNeuronLayer
    bn: BatchNorm2d
    producer: Conv2d


class ResNet(Module):
    """Executable ResNetSpec.

    ``eta`` counts live parameters: the total minus the entries pinned at
    zero by pruning.
    """

    def __init__(self, spec: ResNetSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        c_in = spec.input_shape[0]
        width = spec.stack_filters[0]
        self.stem = Conv2d(c_in, width, 3, 1, rng)
        self.blocks: list[tuple[int, int, ResidualBlock]] = []
        for s in range(spec.n_stacks):
            kernels = spec.stack_kernels(s)
            for b in range(spec.blocks[s]):
                c_out = spec.stack_filters[s]
                stride = 2 if (s > 0 and b == 0) else 1
                block = ResidualBlock(width, c_out, (kernels[2 * b], kernels[2 * b + 1]), stride,
                                      spec.neuron_fractions[s], rng)
                self.add_module(f"stack{s}.block{b}", block)
                self.blocks.append((s, b, block))
                width = c_out
        self.classifier = Dense(width, spec.num_classes, rng)

    @property
    def eta(self) -> int:
        return self.num_parameters() - int(sum(m.sum() for m in self.pruned_masks().values()))

    def pruned_masks(self) -> dict[int, np.ndarray]:
        """Boolean masks of entries removed by pruning, keyed by parameter id.

        A pruned neuron owns its producing conv's output slice and its
        batch-norm scale and shift.
        """
        masks: dict[int, np.ndarray] = {}
        for ref in self.neuron_layers():
            pruned = ref.layer.pruned
            if not pruned.any():
                continue
            for p in (ref.producer.weight, ref.bn.gamma, ref.bn.beta):
                m = masks.setdefault(id(p), np.zeros(p.shape, dtype=bool))
                m[pruned] = True
        return masks

    def neuron_layers(self) -> list[NeuronLayerRef]:
        refs = []
        producer = self.stem
        for s, b, block in self.blocks:
            for o, op in enumerate((block.op1, block.op2), start=1):
                refs.append(NeuronLayerRef(len(refs), f"stack{s}.block{b}.op{o}", s, b, o,
                                           op.neuron, op.bn, producer))
                producer = op.conv
        return refs

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for _, _, block in self.blocks:
            x = block(x)
        return self.classifier(ops.global_avg_pool(x))


def build_resnet(spec: ResNetSpec, seed: int = 0, rng: Optional[np.random.Generator] = None) -> ResNet:
    rng = rng if rng is not None else np.random.default_rng(seed)
    net = ResNet(spec, rng)
    expected = sum(i.count for i in resnet_ledger(spec))
    if net.num_parameters() != expected:
        raise ArchitectureError(f"built {net.num_parameters()} parameters, ledger says {expected}")
    return net


def resnet_ledger(spec: ResNetSpec) -> list[LedgerItem]:
    """Itemized parameter counts named like the built network's parameters."""
    items = [LedgerItem("stem.weight", "conv", spec.input_shape[0] * spec.stack_filters[0] * 9)]
    width = spec.stack_filters[0]
    for s in range(spec.n_stacks):
        kernels = spec.stack_kernels(s)
        for b in range(spec.blocks[s]):
            c_out = spec.stack_filters[s]
            stride = 2 if (s > 0 and b == 0) else 1
            prefix = f"stack{s}.block{b}"
            for o, (ci, k) in enumerate(((width, kernels[2 * b]), (c_out, kernels[2 * b + 1])), start=1):
                items.append(LedgerItem(f"{prefix}.op{o}.bn.gamma", "batch_norm", ci))
                items.append(LedgerItem(f"{prefix}.op{o}.bn.beta", "batch_norm", ci))
                items.append(LedgerItem(f"{prefix}.op{o}.conv.weight", "conv", ci * c_out * k * k))
            if width != c_out or stride != 1:
                items.append(LedgerItem(f"{prefix}.shortcut.weight", "conv", width * c_out))
            width = c_out
    items.append(LedgerItem("classifier.weight", "classifier", width * spec.num_classes))
    items.append(LedgerItem("classifier.bias", "classifier", spec.num_classes))
    return items


def resnet_parameter_count(spec: ResNetSpec, category: Optional[str] = None) -> int:
    return sum(i.count for i in resnet_ledger(spec) if category is None or i.category == category)
