"""Time-in-range metrics (TAR, TIR, TBR) from glucose grids.

Component order is (TAR, TIR, TBR) everywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from glyco.autodiff import Tensor, ops
from glyco.errors import ParameterError

TARGETS = ("tar", "tir", "tbr")


@dataclass(frozen=True)
class Thresholds:
    tau_low: float = 70.0
    tau_high: float = 180.0

    def __post_init__(self):
        if not 0 < self.tau_low < self.tau_high:
            raise ParameterError(f"need 0 < tau_low < tau_high, got {self.tau_low}, {self.tau_high}")


@dataclass(frozen=True)
class TrVector:
    tar: float
    tir: float
    tbr: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tar, self.tir, self.tbr])

    @classmethod
    def from_array(cls, a) -> "TrVector":
        a = np.asarray(a, dtype=np.float64).ravel()
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def is_simplex(self, tol: float = 1e-9) -> bool:
        a = self.as_array()
        return bool(np.all(a >= -tol) and np.all(a <= 1 + tol) and abs(a.sum() - 1.0) <= tol)


DEFAULT_THRESHOLDS = Thresholds()


def count_ranges(values: np.ndarray, th: Thresholds = DEFAULT_THRESHOLDS) -> tuple[int, int, int]:
    v = np.asarray(values, dtype=np.float64)
    above = int(np.count_nonzero(v > th.tau_high))
    below = int(np.count_nonzero(v < th.tau_low))
    return above, v.size - above - below, below


def compute_tr_hard(grid, th: Thresholds = DEFAULT_THRESHOLDS) -> TrVector:
    """Exact indicator counting; TIR bounds are inclusive, TAR/TBR strict."""
    values = getattr(grid, "values", grid)
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ParameterError("cannot compute time in range of an empty grid")
    above, inside, below = count_ranges(v, th)
    n = v.size
    return TrVector(above / n, inside / n, below / n)


def compute_tr_soft(grid_mgdl: Tensor, th: Thresholds = DEFAULT_THRESHOLDS, temperature: float = 5.0) -> Tensor:
    """Sigmoid-relaxed counting, differentiable in the grid values.

    ``grid_mgdl`` is ``[D, T]`` or batched ``[N, D, T]``; the result is ``[3]``
    or ``[N, 3]`` ordered (TAR, TIR, TBR) with TIR defined as the remainder.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    inv = 1.0 / temperature
    axes = (-2, -1)
    tar = ops.mean(ops.sigmoid(ops.mul(ops.sub(grid_mgdl, th.tau_high), inv)), axis=axes)
    tbr = ops.mean(ops.sigmoid(ops.mul(ops.sub(th.tau_low, grid_mgdl), inv)), axis=axes)
    tir = ops.sub(1.0, ops.add(tar, tbr))
    if grid_mgdl.ndim == 2:
        parts = [ops.reshape(t, (1,)) for t in (tar, tir, tbr)]
        return ops.concat(parts, axis=0)
    parts = [ops.reshape(t, (t.shape[0], 1)) for t in (tar, tir, tbr)]
    return ops.concat(parts, axis=1)
