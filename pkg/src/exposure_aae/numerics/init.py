"""Seeded parameter initialisation."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def uniform_fan_in(shape, fan_in: int, rng: np.random.Generator, name: str | None = None) -> Tensor:
    """Uniform in ``[-sqrt(1/fan_in), +sqrt(1/fan_in)]``."""
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)
