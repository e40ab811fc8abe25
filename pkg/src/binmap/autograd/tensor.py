"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is held implicitly: each Tensor produced by an op keeps references
to its parents and a closure that scatters the output gradient back to them.
`Tensor.backward()` runs the closures in reverse topological order, so each
gradient accumulator is complete before it is consumed.
"""

from __future__ import annotations

import os

import numpy as np

_DEBUG = bool(int(os.environ.get("BINMAP_DEBUG", "0")))


def set_debug(flag: bool) -> None:
    """Enable NaN/Inf checks on every op output (slow; for diagnosis)."""
    global _DEBUG
    _DEBUG = bool(flag)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        arr = np.asarray(data)
        # Arrays are float32; 0-d reduction results keep float64 precision.
        if not (arr.ndim == 0 and arr.dtype == np.float64):
            arr = arr.astype(np.float32)
        if _DEBUG and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(np.float32).copy()
        else:
            self.grad += g.astype(np.float32)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (default seed: ones)."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if seed is None:
            seed = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(seed, dtype=np.float32))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap an op output; drops the backward closure when no input needs grad."""
    track = any(t.requires_grad for t in inputs)
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    if not track:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=inputs, backward=backward)
