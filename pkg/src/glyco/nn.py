"""Parameter storage shared by the selector and the dual-path network."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from glyco.autodiff import Tensor, ops, parameter
from glyco.errors import DimensionError


class ParamStore:
    """Named trainable tensors plus batchnorm running statistics, in insertion order."""

    def __init__(self, rng: np.random.Generator | None = None):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.stats: "OrderedDict[str, ops.RunningStats]" = OrderedDict()
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def add(self, name: str, shape, init: str = "he", fan_in: int | None = None, value: float = 0.0) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if init == "he":
            fan = fan_in if fan_in is not None else int(np.prod(shape[1:]))
            data = self.rng.normal(0.0, np.sqrt(2.0 / max(fan, 1)), size=shape)
        elif init == "xavier":
            fan = fan_in if fan_in is not None else int(np.prod(shape[1:]))
            data = self.rng.normal(0.0, np.sqrt(1.0 / max(fan, 1)), size=shape)
        elif init == "const":
            data = np.full(shape, float(value))
        else:
            raise ValueError(f"unknown init {init!r}")
        t = parameter(data, name=name)
        self.params[name] = t
        return t

    def add_bn(self, name: str, channels: int) -> None:
        self.add(f"{name}.gamma", (channels,), init="const", value=1.0)
        self.add(f"{name}.beta", (channels,), init="const", value=0.0)
        self.stats[name] = ops.RunningStats(channels)

    def bn(self, name: str, x: Tensor, training: bool) -> Tensor:
        return ops.batchnorm(x, self[f"{name}.gamma"], self[f"{name}.beta"], training, self.stats[name])

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # flat (de)serialisation ---------------------------------------------
    def flat(self) -> np.ndarray:
        parts = [p.data.ravel() for p in self.params.values()]
        for st in self.stats.values():
            parts += [st.mean, st.var]
        return np.concatenate(parts) if parts else np.zeros(0)

    def flat_size(self) -> int:
        return self.count() + 2 * sum(st.mean.size for st in self.stats.values())

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.flat_size():
            raise DimensionError(f"expected {self.flat_size()} values, got {vec.size}")
        pos = 0
        for p in self.params.values():
            n = p.data.size
            p.data[...] = vec[pos : pos + n].reshape(p.data.shape)
            pos += n
        for st in self.stats.values():
            n = st.mean.size
            st.mean = vec[pos : pos + n].copy()
            st.var = vec[pos + n : pos + 2 * n].copy()
            pos += 2 * n

    def snapshot(self) -> np.ndarray:
        return self.flat().copy()
