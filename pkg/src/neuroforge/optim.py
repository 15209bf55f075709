"""Momentum SGD and the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OptimState:
    """Velocity buffers plus the hyperparameters of classical momentum SGD."""

    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def sgd_step(
    params: Sequence[Tensor],
    state: OptimState,
    frozen: Optional[dict[int, np.ndarray]] = None,
) -> None:
    """Update ``params`` in place from their ``grad`` buffers.

    ``v <- momentum * v + grad + weight_decay * param`` then
    ``param <- param - lr * v``.  ``frozen`` maps ``id(param)`` to a boolean
    mask of entries pinned at zero (pruned weights); those entries and their
    velocity are reset after the update.
    """
    if state.lr <= 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p!r} has no gradient; run backward() first")
        key = id(p)
        g = p.grad + state.weight_decay * p.data if state.weight_decay else p.grad
        v = state.velocity.get(key)
        if v is None:
            v = np.zeros_like(p.data)
            state.velocity[key] = v
        v *= state.momentum
        v += g
        p.data -= (state.lr * v).astype(p.data.dtype)
        if frozen is not None and key in frozen:
            mask = frozen[key]
            p.data[mask] = 0
            v[mask] = 0


def lr_schedule(step: int, total_steps: int, base_lr: float) -> float:
    """Cut the learning rate by 80% at every 30% of the run.

    >>> lr_schedule(300, 1000, 0.01)
    0.002
    """
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    # floor(step / (0.3 * total)) in exact integer arithmetic
    decays = (10 * step) // (3 * total_steps)
    return base_lr / 5 ** decays
