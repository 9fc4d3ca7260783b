"""Dense 64-bit tensors with gradient slots, and the named parameter store."""

from __future__ import annotations

import numpy as np


class Tensor:
    """A float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("values", "grad")

    def __init__(self, values, grad=None):
        self.values = np.asarray(values, dtype=np.float64)
        if grad is not None:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.values.shape:
                raise ValueError(
                    f"grad shape {grad.shape} does not match value shape {self.values.shape}"
                )
        self.grad = grad

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape})"


class ParameterStore:
    """Named trainable tensors. Names are unique; insertion order is stable."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(values)
        if not np.all(np.isfinite(t.values)):
            raise ValueError(f"parameter {name!r} contains non-finite values")
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grads(self):
        for t in self._tensors.values():
            t.zero_grad()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.values)) for t in self._tensors.values())

    def num_scalars(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def copy(self) -> "ParameterStore":
        out = ParameterStore(seed=self.seed)
        for name, t in self._tensors.items():
            copied = out.add(name, t.values.copy())
            if t.grad is not None:
                copied.grad = t.grad.copy()
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.values for name, t in self._tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], seed: int = 0) -> "ParameterStore":
        store = cls(seed=seed)
        for name, values in arrays.items():
            store.add(name, values)
        return store
