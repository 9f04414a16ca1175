"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from glyco.autodiff.tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max over entries of |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numerical_grad(f: Callable[[], float], t: Tensor, coords=None, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``t.data`` (in place perturbation)."""
    flat = t.data.reshape(-1)
    idxs = range(flat.size) if coords is None else coords
    out = []
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    n_coords: int | None = None,
    h: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Compare backprop with finite differences; returns the worst relative error.

    ``loss_fn`` rebuilds the graph on every call. With ``n_coords`` set, that
    many coordinates are sampled per parameter instead of all of them.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    def value() -> float:
        return float(loss_fn().data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, analytic):
        size = p.data.size
        if n_coords is None or n_coords >= size:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=n_coords, replace=False)
        num = numerical_grad(value, p, coords, h)
        worst = max(worst, relative_error(ga.reshape(-1)[coords], num, floor))
    return worst
