"""Optimizers. Parameter arrays are updated in place; shapes never change."""
from abc import ABC, abstractmethod
from typing import Dict, Optional

import numpy as np

from ltcnn.errors import ShapeError
from ltcnn.tensor import Tensor


def _check_grads(params: Dict[str, Tensor], grads: Dict[str, Tensor]) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise KeyError(f"no gradient for parameter '{name}'")
        if g.shape != p.shape:
            raise ShapeError(f"shape mismatch: gradient {g.shape} vs parameter '{name}' {p.shape}")


def sgd_momentum_step(params: Dict[str, Tensor], grads: Dict[str, Tensor], velocity: Dict[str, Tensor],
                      lr: float, momentum: float) -> None:
    """v <- momentum * v + g; p <- p - lr * v."""
    _check_grads(params, grads)
    for name, p in params.items():
        v = velocity[name]
        v *= momentum
        v += grads[name]
        p -= lr * v


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Tensor], m: Dict[str, Tensor], v: Dict[str, Tensor],
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; `t` is the 1-based step count."""
    if t < 1:
        raise ValueError(f"adam step count must be >= 1, got {t}")
    _check_grads(params, grads)
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m1, m2 = m[name], v[name]
        m1 *= beta1
        m1 += (1.0 - beta1) * g
        m2 *= beta2
        m2 += (1.0 - beta2) * (g * g)
        p -= lr * (m1 / correction1) / (np.sqrt(m2 / correction2) + eps)


def global_norm(grads: Dict[str, Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads: Dict[str, Tensor], max_norm: float) -> Dict[str, Tensor]:
    """Scale all gradients together so their joint L2 norm is at most `max_norm`."""
    if max_norm <= 0:
        raise ValueError(f"clip norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: (g * scale).astype(g.dtype, copy=False) for name, g in grads.items()}


def step_decay(base_lr: float, epoch: int, every: Optional[int], factor: float) -> float:
    """Learning rate for a 1-based epoch: multiplied by `factor` once per `every` completed epochs."""
    if every is None:
        return base_lr
    return base_lr * factor ** ((epoch - 1) // every)


class Optimizer(ABC):
    """Stateful optimizer over a fixed set of named parameters."""

    def __init__(self, params: Dict[str, Tensor], lr: float):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr

    def _zeros(self) -> Dict[str, Tensor]:
        return {name: np.zeros_like(p) for name, p in self.params.items()}

    @abstractmethod
    def step(self, grads: Dict[str, Tensor]) -> None:
        pass


class SGDMomentum(Optimizer):
    def __init__(self, params: Dict[str, Tensor], lr: float, momentum: float = 0.9):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity = self._zeros()

    def step(self, grads):
        sgd_momentum_step(self.params, grads, self.velocity, self.lr, self.momentum)


class Adam(Optimizer):
    def __init__(self, params: Dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = self._zeros()
        self.v = self._zeros()
        self.t = 0

    def step(self, grads):
        self.t += 1
        adam_step(self.params, grads, self.m, self.v, self.t, self.lr, self.beta1, self.beta2, self.eps)


def make_optimizer(name: str, params: Dict[str, Tensor], lr: float, momentum: float = 0.9,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Optimizer:
    if name == "adam":
        return Adam(params, lr, beta1, beta2, eps)
    if name == "sgd-momentum":
        return SGDMomentum(params, lr, momentum)
    raise ValueError(f"unknown optimizer '{name}'")
