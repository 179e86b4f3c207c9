"""Layers with explicit forward and backward passes.

A layer caches what its backward pass needs during ``forward``; ``backward`` takes the
gradient with respect to the layer's output, accumulates parameter gradients into
``grads`` and returns the gradient with respect to its input.
"""
from abc import ABC, abstractmethod
from typing import Dict, Optional, Tuple

import numpy as np

from models.configs import FTAConfig
from tensor_nn import ops
from tensor_nn.fta import fta, fta_backward


class Layer(ABC):
    """Base class; parameterless layers leave ``params`` empty"""

    def __init__(self, name: str):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params.items()}
        return f'<{type(self).__name__} {self.name} {shapes}>'

    @abstractmethod
    def forward(self, x: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, dout: np.ndarray) -> np.ndarray:
        pass

    def zero_grad(self) -> None:
        for key, value in self.params.items():
            self.grads[key] = np.zeros_like(value)

    def _accumulate(self, key: str, grad: np.ndarray) -> None:
        if key in self.grads:
            self.grads[key] += grad
        else:
            self.grads[key] = grad.astype(self.params[key].dtype, copy=True)


class Conv2D(Layer):
    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int, stride: int, pad: int,
                 rng: np.random.Generator, dtype=ops.real_type):
        super().__init__(name)
        self.stride, self.pad = stride, pad
        self.params['W'] = ops.xavier_uniform((kernel, kernel, in_channels, out_channels), rng, dtype)
        self.params['b'] = np.zeros(out_channels, dtype=dtype)
        self._cache: Optional[Tuple[np.ndarray, Tuple[int, ...]]] = None

    def forward(self, x):
        out, cols = ops.conv2d_forward(x, self.params['W'], self.params['b'], self.stride, self.pad)
        self._cache = (cols, x.shape)
        return ops.check_finite(out, self.name)

    def backward(self, dout):
        cols, x_shape = self._cache
        dx, dw, db = ops.conv2d_backward(dout, cols, x_shape, self.params['W'], self.stride, self.pad)
        self._accumulate('W', dw)
        self._accumulate('b', db)
        return dx


class ConvTranspose2D(Layer):
    """Upsampling deconvolution; weights are (K, K, out_channels, in_channels)"""

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int, stride: int, pad: int,
                 rng: np.random.Generator, dtype=ops.real_type):
        super().__init__(name)
        self.stride, self.pad = stride, pad
        self.params['W'] = ops.xavier_uniform((kernel, kernel, out_channels, in_channels), rng, dtype)
        self.params['b'] = np.zeros(out_channels, dtype=dtype)
        self._x: Optional[np.ndarray] = None

    def forward(self, x):
        self._x = x
        out = ops.conv_transpose2d_forward(x, self.params['W'], self.params['b'], self.stride, self.pad)
        return ops.check_finite(out, self.name)

    def backward(self, dout):
        dx, dw, db = ops.conv_transpose2d_backward(dout, self._x, self.params['W'], self.stride, self.pad)
        self._accumulate('W', dw)
        self._accumulate('b', db)
        return dx


class Linear(Layer):
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator, dtype=ops.real_type,
                 bias: bool = True):
        super().__init__(name)
        self.params['W'] = ops.xavier_uniform((n_in, n_out), rng, dtype)
        if bias:
            self.params['b'] = np.zeros(n_out, dtype=dtype)
        self._x: Optional[np.ndarray] = None

    def forward(self, x):
        self._x = x
        bias = self.params.get('b', 0)
        return ops.check_finite(ops.linear_forward(x, self.params['W'], bias), self.name)

    def backward(self, dout):
        dx, dw, db = ops.linear_backward(dout, self._x, self.params['W'])
        self._accumulate('W', dw)
        if 'b' in self.params:
            self._accumulate('b', db)
        return dx


class ReLU(Layer):
    def __init__(self, name: str = 'relu'):
        super().__init__(name)
        self._x: Optional[np.ndarray] = None

    def forward(self, x):
        self._x = x
        return ops.relu(x)

    def backward(self, dout):
        return ops.relu_backward(dout, self._x)


class FTA(Layer):
    def __init__(self, cfg: FTAConfig, name: str = 'fta'):
        super().__init__(name)
        self.cfg = cfg
        self._z: Optional[np.ndarray] = None

    def forward(self, x):
        self._z = x
        return fta(x, self.cfg)

    def backward(self, dout):
        return fta_backward(dout, self._z, self.cfg)


class Flatten(Layer):
    def __init__(self, name: str = 'flatten'):
        super().__init__(name)
        self._shape: Optional[Tuple[int, ...]] = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Reshape(Layer):
    """(N, prod(shape)) -> (N, *shape)"""

    def __init__(self, shape: Tuple[int, ...], name: str = 'reshape'):
        super().__init__(name)
        self.shape = tuple(shape)

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout):
        return dout.reshape(dout.shape[0], -1)
