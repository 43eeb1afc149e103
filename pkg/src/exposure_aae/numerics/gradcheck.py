"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numerical_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], index: int,
                       step: float = 1e-5) -> np.ndarray:
    """d sum(fn(*arrays)) / d arrays[index] by central differences."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat, gflat = target.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        plus = float(np.sum(fn(*[Tensor(a) for a in base]).data))
        flat[k] = orig - step
        minus = float(np.sum(fn(*[Tensor(a) for a in base]).data))
        flat[k] = orig
        gflat[k] = (plus - minus) / (2.0 * step)
    return grad


def analytic_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*inputs)
    tape.backward(out, np.ones_like(out.data))
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], step: float = 1e-5,
                    wrt: Sequence[int] | None = None) -> float:
    """Largest relative error between reverse-mode and finite-difference gradients."""
    wrt = range(len(arrays)) if wrt is None else wrt
    analytic = analytic_gradients(fn, arrays)
    return max(relative_error(analytic[i], numerical_gradient(fn, arrays, i, step)) for i in wrt)
