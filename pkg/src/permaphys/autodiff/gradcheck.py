"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad_at(f, t: Tensor, flat_index: int, h: float = 1e-5) -> float:
    """Central-difference d f() / d t.flat[flat_index]."""
    flat = t.data.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + h
    f_plus = f().item()
    flat[flat_index] = orig - h
    f_minus = f().item()
    flat[flat_index] = orig
    return (f_plus - f_minus) / (2.0 * h)


def max_grad_error(f, tensors: list[Tensor], rng: np.random.Generator,
                   n_coords: int = 20, h: float = 1e-5) -> float:
    """Worst relative error between analytic and numerical gradients.

    Spot-checks up to `n_coords` random coordinates of each tensor after a
    single analytic backward pass.
    """
    for t in tensors:
        t.zero_grad()
    loss = f()
    loss.backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "tensor unreachable from the loss"
        n = min(n_coords, t.data.size)
        coords = rng.choice(t.data.size, size=n, replace=False)
        for c in coords:
            analytic = t.grad.reshape(-1)[c]
            numeric = numerical_grad_at(f, t, int(c), h=h)
            denom = max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
