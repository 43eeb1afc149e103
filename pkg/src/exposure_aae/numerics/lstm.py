"""Single LSTM cell built from differentiable primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from . import ops
from .tensor import Tensor

GATES = ("i", "f", "o", "c")


@dataclass
class LSTMWeights:
    """Stacked gate parameters, gate order ``(i, f, o, c)`` along the last axis.

    ``W`` is [input, 4*hidden], ``U`` is [hidden, 4*hidden], ``b`` is [4*hidden].
    """

    W: Tensor
    U: Tensor
    b: Tensor

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]

    @property
    def input_size(self) -> int:
        return self.W.shape[0]


def lstm_cell(z_t: Tensor, h_prev: Tensor, c_prev: Tensor, weights: LSTMWeights) -> tuple[Tensor, Tensor]:
    """One step of a standard LSTM.

    i, f, o are sigmoid gates of ``W z_t + U h_prev + b``; the candidate uses
    tanh; ``c_t = f*c_prev + i*cand`` and ``h_t = o*tanh(c_t)``.
    """
    n = weights.hidden_size
    if weights.W.shape[1] != 4 * n or weights.U.shape != (n, 4 * n) or weights.b.shape != (4 * n,):
        raise DimensionError(
            f"lstm_cell: inconsistent weights W{weights.W.shape} U{weights.U.shape} b{weights.b.shape}"
        )
    if z_t.ndim != 2 or z_t.shape[1] != weights.input_size:
        raise DimensionError(f"lstm_cell: input {z_t.shape} does not match W{weights.W.shape}")
    if h_prev.shape != (z_t.shape[0], n) or c_prev.shape != (z_t.shape[0], n):
        raise DimensionError(f"lstm_cell: state shapes {h_prev.shape}, {c_prev.shape} != {(z_t.shape[0], n)}")
    pre = ops.add(ops.add(ops.matmul(z_t, weights.W), ops.matmul(h_prev, weights.U)), weights.b)
    return _gates(pre, c_prev, n)


def _gates(pre: Tensor, c_prev: Tensor, n: int) -> tuple[Tensor, Tensor]:
    i_t = ops.sigmoid(pre[:, 0:n])
    f_t = ops.sigmoid(pre[:, n : 2 * n])
    o_t = ops.sigmoid(pre[:, 2 * n : 3 * n])
    cand = ops.tanh(pre[:, 3 * n : 4 * n])
    c_t = ops.add(ops.mul(f_t, c_prev), ops.mul(i_t, cand))
    return ops.mul(o_t, ops.tanh(c_t)), c_t


def lstm_sequence(seq: Tensor, weights: LSTMWeights, h0: Tensor | None = None,
                  c0: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Run the cell over ``seq`` [batch, time, input]; returns the final (h, c).

    Same arithmetic as looping :func:`lstm_cell`, but the input projection
    ``seq @ W`` is done for all steps in one product.
    """
    n = weights.hidden_size
    if seq.ndim != 3 or seq.shape[2] != weights.input_size:
        raise DimensionError(f"lstm_sequence: input {seq.shape} does not match W{weights.W.shape}")
    b, steps, width = seq.shape
    h = Tensor(np.zeros((b, n))) if h0 is None else h0
    c = Tensor(np.zeros((b, n))) if c0 is None else c0
    proj = ops.reshape(ops.matmul(ops.reshape(seq, (b * steps, width)), weights.W), (b, steps, 4 * n))
    proj = ops.add(proj, weights.b)
    for t in range(steps):
        h, c = _gates(ops.add(proj[:, t, :], ops.matmul(h, weights.U)), c, n)
    return h, c
