import logging
from typing import Dict

import numpy as np

from tensor_nn.ops import check_finite
from utils.errors import UsageError

logger = logging.getLogger(__name__)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of ``param``, ``m`` and ``v`` in place (t counts from 1)"""
    if param.shape != grad.shape or m.shape != param.shape or v.shape != param.shape:
        raise UsageError(f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    check_finite(param, 'adam_step')


class Adam:
    """Adam over a flat name -> tensor mapping; moments are created on first use"""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def __repr__(self):
        return f'<Adam lr={self.lr} t={self.t} tensors={len(self.m)}>'

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            adam_step(param, grad, self.m[name], self.v[name], self.t, self.lr,
                      self.beta1, self.beta2, self.eps)
