"""2-D convolution (cross-correlation) and its adjoint, the transposed convolution.

Kernels always use the convolution layout ``[out_ch, in_ch, kH, kW]``. A
transposed convolution with kernel ``k`` maps ``out_ch`` channels back to
``in_ch`` channels and is the exact adjoint of ``conv2d(., k)`` for the same
stride and padding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_result


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _conv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _check_conv(x_shape, k_shape, stride, padding) -> None:
    if len(x_shape) != 4 or len(k_shape) != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x_shape} and {k_shape}")
    if x_shape[1] != k_shape[1]:
        raise DimensionError(f"conv2d: input has {x_shape[1]} channels, kernel expects {k_shape[1]}")
    if min(stride) < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    for n, k, p in zip(x_shape[2:], k_shape[2:], padding):
        if k > n + 2 * p:
            raise DimensionError(
                f"conv2d: kernel {tuple(k_shape[2:])} larger than padded input "
                f"{tuple(n + 2 * q for n, q in zip(x_shape[2:], padding))}"
            )


def _windows(x: np.ndarray, kshape, stride, padding) -> np.ndarray:
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = sliding_window_view(xp, kshape, axis=(2, 3))
    return win[:, :, :: stride[0], :: stride[1]]  # [B, C, Ho, Wo, kH, kW]


def _conv_forward(x: np.ndarray, k: np.ndarray, stride, padding) -> np.ndarray:
    win = _windows(x, k.shape[2:], stride, padding)
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))  # [B, Ho, Wo, O]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray, kshape, stride, padding) -> np.ndarray:
    win = _windows(x, kshape[2:], stride, padding)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # [O, C, kH, kW]


def _conv_input_grad(g: np.ndarray, k: np.ndarray, x_shape, stride, padding) -> np.ndarray:
    b, c, h, w = x_shape
    ph, pw = padding
    sh, sw = stride
    _, _, ho, wo = g.shape
    full = np.zeros((b, c, h + 2 * ph, w + 2 * pw))
    for i in range(k.shape[2]):
        for j in range(k.shape[3]):
            contrib = np.tensordot(g, k[:, :, i, j], axes=([1], [0]))  # [B, Ho, Wo, C]
            full[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += contrib.transpose(0, 3, 1, 2)
    return full[:, :, ph : ph + h, pw : pw + w]


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlate ``x`` [B, C, H, W] with ``kernel`` [O, C, kH, kW]."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    stride, padding = _pair(stride), _pair(padding)
    _check_conv(x.shape, kernel.shape, stride, padding)
    out = _conv_forward(x.data, kernel.data, stride, padding)

    def backward(g):
        return (
            _conv_input_grad(g, kernel.data, x.shape, stride, padding) if x.requires_grad else None,
            _conv_kernel_grad(x.data, g, kernel.shape, stride, padding) if kernel.requires_grad else None,
        )

    return make_result(out, (x, kernel), backward)


def conv2d_transpose(y: Tensor, kernel: Tensor, stride=1, padding=0, output_padding=0) -> Tensor:
    """Adjoint of :func:`conv2d` with respect to its input.

    ``y`` is [B, O, Ho, Wo]; the result is [B, C, H, W] with
    ``H = (Ho - 1) * stride - 2 * padding + kH + output_padding``.
    """
    y, kernel = as_tensor(y), as_tensor(kernel)
    stride, padding, opad = _pair(stride), _pair(padding), _pair(output_padding)
    if y.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d_transpose expects 4-D input and kernel, got {y.shape} and {kernel.shape}")
    if y.shape[1] != kernel.shape[0]:
        raise DimensionError(
            f"conv2d_transpose: input has {y.shape[1]} channels, kernel expects {kernel.shape[0]}"
        )
    if any(o >= s for o, s in zip(opad, stride)):
        raise DimensionError("conv2d_transpose: output_padding must be smaller than stride")
    h = (y.shape[2] - 1) * stride[0] - 2 * padding[0] + kernel.shape[2] + opad[0]
    w = (y.shape[3] - 1) * stride[1] - 2 * padding[1] + kernel.shape[3] + opad[1]
    x_shape = (y.shape[0], kernel.shape[1], h, w)
    if h < 1 or w < 1:
        raise DimensionError(f"conv2d_transpose: empty output {x_shape}")
    _check_conv(x_shape, kernel.shape, stride, padding)
    out = _conv_input_grad(y.data, kernel.data, x_shape, stride, padding)

    def backward(g):
        return (
            _conv_forward(g, kernel.data, stride, padding) if y.requires_grad else None,
            _conv_kernel_grad(g, y.data, kernel.shape, stride, padding) if kernel.requires_grad else None,
        )

    return make_result(np.ascontiguousarray(out), (y, kernel), backward)


def conv_output_shape(h: int, w: int, kernel_hw, stride=1, padding=0) -> tuple[int, int]:
    stride, padding = _pair(stride), _pair(padding)
    kh, kw = _pair(kernel_hw)
    return _conv_out_size(h, kh, stride[0], padding[0]), _conv_out_size(w, kw, stride[1], padding[1])
