"""Dense tensor operations with hand-written reverse-mode gradients.

Tensors are NumPy arrays in NHWC layout for images and (N, features) for vectors.
Computation follows the dtype of the inputs: float32 for training, float64 when the
gradient checks re-evaluate a layer.
"""
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.errors import NumericalError, UsageError

real_type = np.float32


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"Non-finite values produced by {where}")
    return x


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + kernel


def im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """(N, H, W, C) -> (N, Ho, Wo, K*K*C) patches, kernel-row-major then channel"""
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))  # N, Hp-K+1, Wp-K+1, C, K, K
    windows = windows[:, ::stride, ::stride]
    n, ho, wo, c = windows.shape[:4]
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n, ho, wo, kernel * kernel * c)


def col2im(cols: np.ndarray, x_shape: Tuple[int, ...], kernel: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch gradients back onto the input grid"""
    n, h, w, c = x_shape
    ho, wo = cols.shape[1], cols.shape[2]
    patches = cols.reshape(n, ho, wo, kernel, kernel, c)
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            dxp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :] += patches[:, :, :, ki, kj, :]
    return dxp[:, pad:pad + h, pad:pad + w, :]


def _check_conv_shapes(x: np.ndarray, weight: np.ndarray) -> None:
    if x.ndim != 4:
        raise UsageError(f"conv2d expects NHWC input, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[0] != weight.shape[1]:
        raise UsageError(f"conv2d expects (K, K, Cin, Cout) weights, got {weight.shape}")
    if x.shape[3] != weight.shape[2]:
        raise UsageError(f"Input has {x.shape[3]} channels but weights expect {weight.shape[2]}")


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                   stride: int, pad: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cross-correlation with zero padding; returns (output, patches for backward)"""
    _check_conv_shapes(x, weight)
    kernel, cout = weight.shape[0], weight.shape[3]
    if conv_output_size(x.shape[1], kernel, stride, pad) < 1 or conv_output_size(x.shape[2], kernel, stride, pad) < 1:
        raise UsageError(f"Kernel {kernel} with stride {stride}, pad {pad} does not fit input {x.shape}")
    cols = im2col(x, kernel, stride, pad)
    out = cols @ weight.reshape(-1, cout) + bias
    return out, cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, x_shape: Tuple[int, ...], weight: np.ndarray,
                    stride: int, pad: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    kernel, cout = weight.shape[0], weight.shape[3]
    d2 = dout.reshape(-1, cout)
    dweight = (cols.reshape(-1, cols.shape[-1]).T @ d2).reshape(weight.shape)
    dbias = d2.sum(axis=0)
    dcols = dout @ weight.reshape(-1, cout).T
    dx = col2im(dcols, x_shape, kernel, stride, pad)
    return dx, dweight, dbias


def conv_transpose2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                             stride: int, pad: int) -> np.ndarray:
    """Transposed convolution; ``weight`` is (K, K, Cout, Cin) as for the conv it inverts"""
    if x.ndim != 4 or x.shape[3] != weight.shape[3]:
        raise UsageError(f"conv_transpose2d input {x.shape} does not match weights {weight.shape}")
    kernel, cout = weight.shape[0], weight.shape[2]
    n, h, w, _ = x.shape
    out_shape = (n, conv_transpose_output_size(h, kernel, stride, pad),
                 conv_transpose_output_size(w, kernel, stride, pad), cout)
    cols = x @ weight.reshape(-1, weight.shape[3]).T
    return col2im(cols, out_shape, kernel, stride, pad) + bias


def conv_transpose2d_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray,
                              stride: int, pad: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    kernel, cin = weight.shape[0], weight.shape[3]
    dcols = im2col(dout, kernel, stride, pad)  # N, h, w, K*K*Cout
    dx = dcols @ weight.reshape(-1, cin)
    dweight = (dcols.reshape(-1, dcols.shape[-1]).T @ x.reshape(-1, cin)).reshape(weight.shape)
    dbias = dout.sum(axis=(0, 1, 2))
    return dx, dweight, dbias


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weight.shape[0]:
        raise UsageError(f"Linear layer expects {weight.shape[0]} inputs, got {x.shape[-1]}")
    return x @ weight + bias


def linear_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise UsageError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    return float(check_finite(np.mean(np.square(pred - target)), 'mse'))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return (2.0 / pred.size) * (pred - target)


def xavier_uniform(shape: Tuple[int, ...], rng: np.random.Generator, dtype=real_type) -> np.ndarray:
    """Glorot-uniform init; conv fans include the receptive field"""
    if len(shape) == 4:
        receptive = shape[0] * shape[1]
        fan_in, fan_out = receptive * shape[2], receptive * shape[3]
    else:
        fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def random_shift(obs: np.ndarray, pad: int, prob: float, rng: np.random.Generator) -> np.ndarray:
    """With probability ``prob`` zero-pad by ``pad`` and crop a uniform same-size window"""
    if rng.random() >= prob:
        return obs
    h, w = obs.shape[0], obs.shape[1]
    padded = np.pad(obs, ((pad, pad), (pad, pad), (0, 0)))
    top, left = rng.integers(0, 2 * pad + 1, size=2)
    return padded[top:top + h, left:left + w]
