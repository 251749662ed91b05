"""Adam with bias correction and a reduce-on-plateau schedule."""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, Tensor


class Adam:
    """Adaptive-moment optimizer over a name -> Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter '{name}' has no gradient")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class PlateauScheduler:
    """Divide lr by 10 after `patience` epochs without validation improvement."""

    def __init__(self, optimizer: Adam, factor: float = 0.1, patience: int = 10):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = np.inf
        self.stale_epochs = 0

    def update(self, val_loss: float) -> None:
        if val_loss < self.best:
            self.best = float(val_loss)
            self.stale_epochs = 0
            return
        self.stale_epochs += 1
        if self.stale_epochs >= self.patience:
            self.optimizer.lr *= self.factor
            self.stale_epochs = 0
