"""Minibatch training, evaluation and dataset-size scaling rules."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from . import ops
from .data import Dataset
from .errors import TrainingDiverged
from .nn import Module
from .optim import OptimState, lr_schedule, sgd_step
from .tensor import Tensor, no_grad

# reference point: CIFAR-10 with 16 base filters and 3900 training steps
REF_EXAMPLES = 50000
REF_CHANNELS = 3
REF_FILTERS = 16
REF_STEPS = 3900


@dataclass(frozen=True)
class TrainConfig:
    n_steps: int = 3900
    batch_size: int = 128
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    tl_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be non-negative, got {self.n_steps}")
        for name in ("batch_size", "lr", "tl_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must lie in [0, 1) and weight_decay be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = cls.__dataclass_fields__
        unknown = set(obj) - set(known)
        if unknown:
            raise ValueError(f"unknown training options {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class TrainResult:
    alpha: float
    eta: int
    final_loss: float


def network_eta(network: Module) -> int:
    eta = getattr(network, "eta", None)
    return int(eta) if eta is not None else network.num_parameters()


def evaluate(network: Module, dataset: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy on the eval split, computed in eval mode."""
    x, y = dataset.split("eval")
    if len(y) == 0:
        raise ValueError(f"dataset {dataset.name!r} has an empty eval split")
    was_training = network.training
    network.eval()
    correct = 0
    with no_grad():
        for start in range(0, len(y), batch_size):
            logits = network(Tensor(x[start:start + batch_size]))
            correct += int((logits.data.argmax(axis=1) == y[start:start + batch_size]).sum())
    network.train(was_training)
    return correct / len(y)


def fit(network: Module, dataset: Dataset, n_steps: int, lr_at: Callable[[int], float],
        batch_size: int, seed: int, momentum: float = 0.9, weight_decay: float = 5e-4,
        frozen: Optional[dict[int, np.ndarray]] = None) -> float:
    """Run ``n_steps`` SGD steps with per-epoch seeded shuffles; returns the last loss.

    Raises:
        TrainingDiverged: the loss became NaN or infinite.
    """
    x, y = dataset.split("train")
    n = len(y)
    if n == 0:
        raise ValueError(f"dataset {dataset.name!r} has an empty training split")
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds the {n}-example training split")
    rng = np.random.default_rng(seed)
    params = network.parameters()
    state = OptimState(lr=lr_at(0) if n_steps else 1.0, momentum=momentum, weight_decay=weight_decay)
    per_epoch = n // batch_size
    network.train()
    loss_value = float("nan")
    order = None
    for step in range(n_steps):
        if step % per_epoch == 0:
            order = rng.permutation(n)
        b = step % per_epoch
        idx = order[b * batch_size:(b + 1) * batch_size]
        network.zero_grad()
        loss = ops.cross_entropy(network(Tensor(x[idx])), y[idx])
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise TrainingDiverged(f"loss became {loss_value} at step {step}")
        loss.backward()
        state.lr = lr_at(step)
        sgd_step(params, state, frozen)
    return loss_value


def train_and_eval(network: Module, dataset: Dataset, config: TrainConfig,
                   frozen: Optional[dict[int, np.ndarray]] = None) -> TrainResult:
    """Train for ``config.n_steps`` with the step-decay schedule, then evaluate."""
    loss = fit(network, dataset, config.n_steps,
               lambda s: lr_schedule(s, config.n_steps, config.lr),
               config.batch_size, config.seed, config.momentum, config.weight_decay, frozen)
    return TrainResult(evaluate(network, dataset), network_eta(network), loss)


def epochs_for(n_steps: int, batch_size: int, n_train: int) -> int:
    return math.ceil(n_steps * batch_size / n_train)


@dataclass(frozen=True)
class ScaleSettings:
    n_filters: int
    n_steps: int


def _round(v: float) -> int:
    return max(1, int(math.floor(v + 0.5)))


def scale_settings(n_examples: int, channels: int, channel_factor: bool = True,
                   ref_examples: int = REF_EXAMPLES, ref_channels: int = REF_CHANNELS,
                   ref_filters: int = REF_FILTERS, ref_steps: int = REF_STEPS) -> ScaleSettings:
    """Base filters and training steps grown with the square root of dataset size.

    ``N_F = N_F,ref * sqrt(N / N_ref) * (C / C_ref)`` and
    ``N_S = N_S,ref * sqrt(N / N_ref)``, both rounded half up (minimum 1).
    ``channel_factor=False`` drops the ``C / C_ref`` term.

    >>> scale_settings(50000, 3)
    ScaleSettings(n_filters=16, n_steps=3900)
    """
    if min(n_examples, channels, ref_examples, ref_channels, ref_filters, ref_steps) <= 0:
        raise ValueError("scale_settings inputs must be positive")
    root = math.sqrt(n_examples / ref_examples)
    ratio = channels / ref_channels if channel_factor else 1.0
    return ScaleSettings(_round(ref_filters * root * ratio), _round(ref_steps * root))


def spec_evaluator(dataset: Dataset, config: TrainConfig):
    """Evaluator for the growth search: materialize, train, return ``(alpha, eta)``."""
    from .arch.materialize import materialize

    def evaluate_spec(spec) -> tuple[float, int]:
        network = materialize(spec, seed=config.seed, tl_scale=config.tl_scale)
        result = train_and_eval(network, dataset, config)
        return result.alpha, result.eta

    return evaluate_spec
