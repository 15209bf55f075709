"""Central finite-difference checks against the analytic backward pass."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .ops import mul, sum_all
from .tensor import Tensor


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(np.ravel(a)), np.linalg.norm(np.ravel(b)), 1e-12)
    return float(num / den)


def numeric_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    probe: np.ndarray,
    h: float = 1e-3,
) -> list[np.ndarray]:
    """d/d(inputs) of ``sum(fn(*inputs) * probe)`` by central differences."""
    grads = []
    for idx, arr in enumerate(inputs):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus = _probe_value(fn, inputs, probe)
            flat[j] = orig - h
            minus = _probe_value(fn, inputs, probe)
            flat[j] = orig
            g.reshape(-1)[j] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def _probe_value(fn, inputs, probe) -> float:
    out = fn(*[Tensor(a) for a in inputs])
    return float(np.sum(out.data.astype(np.float64) * probe))


def analytic_gradients(
    fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], probe: np.ndarray
) -> list[np.ndarray]:
    tensors = [Tensor(a, requires_grad=True) for a in inputs]
    out = fn(*tensors)
    sum_all(mul(out, Tensor(probe.astype(out.data.dtype)))).backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in tensors]


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
    h: float = 1e-3,
) -> float:
    """Worst relative error between analytic and numeric gradients of ``fn``.

    The output is contracted with a random probe so that every output element
    contributes to the scalar being differentiated.
    """
    inputs = [np.array(a, copy=True) for a in inputs]
    out = fn(*[Tensor(a) for a in inputs])
    probe = rng.standard_normal(out.shape)
    analytic = analytic_gradients(fn, inputs, probe)
    numeric = numeric_gradients(fn, inputs, probe, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
