"""Named parameter collections with seeded fan-in initialisation."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Ordered mapping of dotted names to trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def set_arrays(self, values) -> None:
        """Replace data by name (dict) or positionally (sequence)."""
        if isinstance(values, dict):
            items = values.items()
        else:
            items = zip(self._params, values)
        for name, arr in items:
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def prefixed(self, prefix: str) -> "ParameterView":
        return ParameterView(self, prefix)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for k, v in self._params.items():
            out.add(k, v.data)
        return out


class ParameterView:
    """A prefix-scoped window onto a :class:`ParameterStore`."""

    def __init__(self, store: ParameterStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def _key(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        return self.store[self._key(name)]

    def __contains__(self, name: str) -> bool:
        return self._key(name) in self.store

    def sub(self, name: str) -> "ParameterView":
        return ParameterView(self.store, self._key(name))


class Initializer:
    """Seeded uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""

    def __init__(self, store: ParameterStore, seed: int):
        self.store = store
        self.rng = np.random.default_rng(seed)

    def weight(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        return self.store.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.store.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.store.add(name, np.ones(shape))

    def linear(self, name: str, d_in: int, d_out: int) -> None:
        self.weight(f"{name}.w", (d_in, d_out), d_in)
        self.zeros(f"{name}.b", (d_out,))

    def conv(self, name: str, c_in: int, c_out: int, k: int) -> None:
        self.weight(f"{name}.w", (c_out, c_in, k, k), c_in * k * k)
        self.zeros(f"{name}.b", (c_out,))

    def norm(self, name: str, dim: int) -> None:
        self.ones(f"{name}.g", (dim,))
        self.zeros(f"{name}.b", (dim,))
