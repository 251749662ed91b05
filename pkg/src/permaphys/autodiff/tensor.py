"""Dense float64 tensors with tape-based reverse-mode autodiff.

The graph is rebuilt on every forward pass, so both network parameters and
plain inputs (e.g. object states being refined by gradient descent) can be
differentiated the same way.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operands with incompatible or invalid shapes."""


class DomainError(ValueError):
    """Input outside an op's mathematical domain (e.g. log of x <= 0)."""


class ContractError(RuntimeError):
    """An op precondition was violated (e.g. backward on a non-scalar)."""


class UnsupportedOpError(ValueError):
    """Requested op variant is not implemented (e.g. 5x5 convolution)."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 ndarray plus an optional gradient buffer.

    Internal nodes keep references to their parents and a `_backward`
    closure that scatters `self.grad` into the parents' grads.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # ---- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- gradient bookkeeping -------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray, own: bool = False) -> None:
        """Add g into grad; own=True lets the tensor keep g without copying
        (callers must guarantee exclusive ownership of the buffer)."""
        if self.grad is None:
            if own and isinstance(g, np.ndarray) and g.shape == self.data.shape:
                self.grad = g
                return
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Gradients accumulate into every reachable requires_grad tensor;
        repeated calls without zero_grad keep accumulating.
        """
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss")

        # Iterative topological order; decode graphs can reach ~1e5 nodes.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operator sugar (full ops live in ops.py) ------------------------------

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    return shape


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape)), requires_grad=requires_grad)


def full(shape, value: float, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(_check_shape(shape), float(value)), requires_grad=requires_grad)


def uniform(shape, lo: float, hi: float, rng, requires_grad: bool = False) -> Tensor:
    """Uniform init; `rng` is a seed int or np.random.Generator."""
    if not lo < hi:
        raise ShapeError(f"uniform requires lo < hi, got [{lo}, {hi})")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(int(rng))
    return Tensor(rng.uniform(lo, hi, _check_shape(shape)), requires_grad=requires_grad)


def constant(data) -> Tensor:
    """Non-differentiable tensor wrapping existing data."""
    return Tensor(data, requires_grad=False)
