"""SGD and Adam over named parameter dicts, plus global gradient-norm clipping."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["Sgd", "Adam", "clip_grad_norm", "OptimizerError", "make_optimizer"]


class OptimizerError(RuntimeError):
    """Missing or non-finite gradient at step time."""


class _Base:
    def __init__(self, params: dict[str, Tensor], lr: float):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr

    def _gather_grads(self) -> dict[str, np.ndarray]:
        grads = {}
        for name, p in self.params.items():
            if p.grad is None:
                raise OptimizerError(f"parameter {name!r} has no gradient")
            if not np.all(np.isfinite(p.grad)):
                raise OptimizerError(f"non-finite gradient in parameter {name!r}")
            grads[name] = p.grad
        return grads

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class Sgd(_Base):
    kind = "sgd"

    def step(self):
        for name, g in self._gather_grads().items():
            p = self.params[name]
            p.data -= self.lr * g


class Adam(_Base):
    """Standard bias-corrected Adam."""

    kind = "adam"

    def __init__(self, params, lr, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        grads = self._gather_grads()
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            p = self.params[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def make_optimizer(kind: str, params: dict[str, Tensor], lr: float, adam_eps: float = 1e-8):
    if kind == "sgd":
        return Sgd(params, lr)
    if kind == "adam":
        return Adam(params, lr, eps=adam_eps)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm
