"""Reconstruction and adversarial losses."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, DomainError
from . import ops
from .tensor import Tensor, as_tensor

LOG_CLAMP = 1e-7


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    return ops.mean(ops.square(ops.sub(pred, target)))


def _check_probabilities(t: Tensor, label: str) -> None:
    d = t.data
    if not np.all(np.isfinite(d)) or np.any(d < 0.0) or np.any(d > 1.0):
        raise DomainError(f"adversarial_loss: {label} must be probabilities in (0, 1)")


def safe_log(p: Tensor) -> Tensor:
    """``log`` with the argument clamped to ``[1e-7, 1 - 1e-7]``."""
    return ops.log(ops.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP))


def adversarial_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Discriminator objective ``-mean(log d_real) - mean(log(1 - d_fake))``.

    Values that sigmoid saturation pushed to exactly 0 or 1 are clamped;
    anything outside [0, 1] is rejected.
    """
    d_real, d_fake = as_tensor(d_real), as_tensor(d_fake)
    _check_probabilities(d_real, "d_real")
    _check_probabilities(d_fake, "d_fake")
    real_term = ops.mean(safe_log(d_real))
    fake_term = ops.mean(safe_log(ops.sub(1.0, d_fake)))
    return ops.mul(ops.add(real_term, fake_term), -1.0)


def generator_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator term ``-mean(log d_fake)``."""
    d_fake = as_tensor(d_fake)
    _check_probabilities(d_fake, "d_fake")
    return ops.mul(ops.mean(safe_log(d_fake)), -1.0)
