"""Importance-driven neuron pruning with fine-tuning.

A neuron is one channel of one prunable layer.  Its importance is the mean
square of the convolution weights producing that channel.  Pruning a neuron
zeroes that weight slice and the channel's batch-norm scale and shift, and
masks the layer output; fine-tuning keeps all of these at zero.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..data import Dataset
from ..errors import SearchError
from ..neurons import KIND_ORDER, NeuronKind
from ..train import evaluate, fit
from .resnet import NeuronLayerRef, ResNet


def importance_l2(network: ResNet, layer: int, channel: int) -> float:
    """Mean of squared producing-conv weights for one neuron; 0 once pruned."""
    refs = network.neuron_layers()
    if not 0 <= layer < len(refs):
        raise IndexError(f"layer {layer} out of range for {len(refs)} prunable layers")
    ref = refs[layer]
    if not 0 <= channel < ref.layer.channels:
        raise IndexError(f"channel {channel} out of range for layer {ref.name} with {ref.layer.channels}")
    if ref.layer.pruned[channel]:
        return 0.0
    w = ref.producer.weight.data[channel].astype(np.float64)
    return float(np.mean(w * w))


def importance_table(network: ResNet) -> list[np.ndarray]:
    """Per-layer importance vectors; pruned channels read 0."""
    out = []
    for ref in network.neuron_layers():
        w = ref.producer.weight.data.astype(np.float64)
        phi = (w * w).reshape(w.shape[0], -1).mean(axis=1)
        phi[ref.layer.pruned] = 0.0
        out.append(phi)
    return out


def frozen_masks(network: ResNet) -> dict[int, np.ndarray]:
    """Entries fine-tuning must keep at zero, keyed by parameter id."""
    return network.pruned_masks()


def prune_neuron(network: ResNet, layer: int, channel: int) -> int:
    """Remove one neuron; returns the number of parameters that became zero."""
    ref = network.neuron_layers()[layer]
    if ref.layer.pruned[channel]:
        raise SearchError(f"neuron {ref.name}[{channel}] is already pruned")
    before = network.eta
    ref.producer.weight.data[channel] = 0
    ref.bn.gamma.data[channel] = 0
    ref.bn.beta.data[channel] = 0
    ref.layer.pruned[channel] = True
    return before - network.eta


@dataclass
class PruneRecord:
    iteration: int
    layer: int
    name: str
    stack: int
    block: int
    op: int
    channel: int
    kind: str
    phi: float
    alpha: float
    eta: int


@dataclass
class PruneState:
    network: ResNet
    alpha0: float
    history: list[PruneRecord] = field(default_factory=list)

    @property
    def eta(self) -> int:
        return self.network.eta


def _argmin_neuron(network: ResNet) -> tuple[int, int, float]:
    best = None
    for i, phi in enumerate(importance_table(network)):
        live = np.flatnonzero(~network.neuron_layers()[i].layer.pruned)
        if live.size == 0:
            continue
        c = int(live[np.argmin(phi[live])])  # first index on ties
        if best is None or phi[c] < best[2]:
            best = (i, c, float(phi[c]))
    if best is None:
        raise SearchError("every neuron is already pruned")
    return best


def prune_step(state: PruneState) -> PruneRecord:
    """Prune the least important live neuron (ties: lowest layer, then channel).

    The returned record is not yet appended to the history and carries
    ``alpha = nan`` until the caller evaluates the pruned network.
    """
    layer, channel, phi = _argmin_neuron(state.network)
    ref: NeuronLayerRef = state.network.neuron_layers()[layer]
    prune_neuron(state.network, layer, channel)
    return PruneRecord(len(state.history) + 1, layer, ref.name, ref.stack, ref.block, ref.op,
                       channel, ref.layer.kinds[channel].value, phi, float("nan"), state.eta)


@dataclass(frozen=True)
class PruneConfig:
    n_iter: int = 1000
    delta_alpha_max: float = 0.02
    finetune_lrs: tuple[float, ...] = (2e-3, 4e-4)
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 0 or self.delta_alpha_max < 0 or self.batch_size < 1:
            raise ValueError("n_iter, delta_alpha_max and batch_size must be non-negative/positive")


def finetune(network: ResNet, dataset: Dataset, config: PruneConfig, iteration: int) -> None:
    """One epoch per learning rate in ``config.finetune_lrs``, pruned entries pinned."""
    steps = len(dataset.train_idx) // config.batch_size
    frozen = frozen_masks(network)
    for j, lr in enumerate(config.finetune_lrs):
        fit(network, dataset, steps, lambda _s, lr=lr: lr, config.batch_size,
            seed=config.seed * 1_000_003 + 2 * iteration + j, momentum=config.momentum,
            weight_decay=config.weight_decay, frozen=frozen)


def _snapshot(network: ResNet) -> list[np.ndarray]:
    arrays = [p.data.copy() for p in network.parameters()]
    for m in network.modules():
        for name in ("running_mean", "running_var", "pruned"):
            if hasattr(m, name):
                arrays.append(getattr(m, name).copy())
    return arrays


def _restore(network: ResNet, arrays: list[np.ndarray]) -> None:
    it = iter(arrays)
    for p in network.parameters():
        p.data[...] = next(it)
    for m in network.modules():
        for name in ("running_mean", "running_var", "pruned"):
            if hasattr(m, name):
                getattr(m, name)[...] = next(it)


@dataclass
class PruneResult:
    state: PruneState
    stop_reason: str  # "n_iter" | "accuracy" | "exhausted"
    final_alpha: float


def pruning_search(network: ResNet, dataset: Dataset, config: PruneConfig,
                   finetune_and_eval: Optional[Callable[[ResNet], float]] = None,
                   alpha0: Optional[float] = None) -> PruneResult:
    """Prune, fine-tune and evaluate until ``n_iter`` or an accuracy drop.

    Stops when ``config.n_iter`` neurons were pruned or accuracy falls below
    ``alpha0 - delta_alpha_max``.  In the latter case the network is rolled
    back to the last state within the bound and the violating step is not
    recorded.
    """
    if dataset.n_examples == 0:
        raise ValueError("pruning needs a non-empty dataset")
    if finetune_and_eval is None:
        def finetune_and_eval(net: ResNet) -> float:
            finetune(net, dataset, config, len(state.history) + 1)
            return evaluate(net, dataset)
    a0 = evaluate(network, dataset) if alpha0 is None else alpha0
    state = PruneState(network, a0)
    alpha = a0
    for _ in range(config.n_iter):
        if not any((~r.layer.pruned).any() for r in network.neuron_layers()):
            return PruneResult(state, "exhausted", alpha)
        saved = _snapshot(network)
        record = prune_step(state)
        acc = finetune_and_eval(network)
        if acc < a0 - config.delta_alpha_max:
            _restore(network, saved)
            return PruneResult(state, "accuracy", alpha)
        record.alpha = acc
        record.eta = state.eta
        state.history.append(record)
        alpha = acc
    return PruneResult(state, "n_iter", alpha)


CSV_FIELDS = ("iteration", "neuron", "layer", "stack", "block", "op", "channel", "kind", "phi", "alpha", "eta")


def history_csv(history: list[PruneRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in history:
        w.writerow([r.iteration, f"{r.name}[{r.channel}]", r.layer, r.stack, r.block, r.op, r.channel,
                    r.kind, repr(r.phi), repr(r.alpha), r.eta])
    return buf.getvalue()


def neural_composition(network: ResNet) -> dict[int, dict[str, float]]:
    """Per stack, each neuron kind's share of the total importance of live neurons.

    Raises:
        SearchError: a stack whose live neurons all have zero importance.
    """
    totals: dict[int, dict[NeuronKind, float]] = {}
    for ref, phi in zip(network.neuron_layers(), importance_table(network)):
        acc = totals.setdefault(ref.stack, {k: 0.0 for k in KIND_ORDER})
        for kind, value in zip(ref.layer.kinds, phi):
            acc[kind] += value
    out = {}
    for stack, acc in totals.items():
        total = sum(acc.values())
        if total <= 0:
            raise SearchError(f"stack {stack} has zero total importance; the network is degenerate")
        out[stack] = {k.value: acc[k] / total for k in KIND_ORDER}
    return out
