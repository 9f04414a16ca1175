"""AETCN active point selector.

Stacked temporal blocks, each with parallel causal dilated convolutions, a
1x1 fusion convolution and a sigmoid channel gate, followed by a 1x1 scoring
head. Scores are trained against tent-shaped targets around real SMBG slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from glyco.autodiff import Adam, Tensor, no_grad, ops
from glyco.domain import PE_DIM, SLOTS_PER_DAY, normalize_glucose, time_encoding
from glyco.errors import DimensionError, NumericalError, ParameterError
from glyco.nn import ParamStore
from glyco.params_io import read_params, write_params
from glyco.sampling import SelectionConstraint, select_topk_separated

MAGIC = b"AETCN1"


@dataclass(frozen=True)
class AetcnConfig:
    num_blocks: int = 3
    branches: int = 4
    dilations: tuple = (1, 2, 4, 8)
    kernel: int = 3
    hidden: int = 32
    T: int = SLOTS_PER_DAY
    P: int = PE_DIM

    def __post_init__(self):
        d = tuple(int(v) for v in self.dilations)
        object.__setattr__(self, "dilations", d)
        if len(d) != self.branches:
            raise ParameterError(f"need one dilation per branch ({self.branches}), got {d}")
        if any(b <= a for a, b in zip(d, d[1:])) or d[0] < 1:
            raise ParameterError(f"dilations must be positive and strictly increasing, got {d}")
        if self.hidden < self.branches:
            raise ParameterError("hidden channels must be >= number of branches")
        if self.num_blocks < 1 or self.kernel < 1:
            raise ParameterError("num_blocks and kernel must be >= 1")

    def branch_widths(self) -> list[int]:
        base, extra = divmod(self.hidden, self.branches)
        return [base + (1 if i < extra else 0) for i in range(self.branches)]

    def to_ints(self) -> list[int]:
        return [self.num_blocks, self.branches, self.kernel, self.hidden, self.T, self.P, *self.dilations]

    @classmethod
    def from_ints(cls, ints) -> "AetcnConfig":
        nb, br, k, h, T, P = ints[:6]
        return cls(num_blocks=nb, branches=br, dilations=tuple(ints[6 : 6 + br]), kernel=k, hidden=h, T=T, P=P)


def init_params(cfg: AetcnConfig, seed: int = 0) -> ParamStore:
    store = ParamStore(np.random.default_rng(seed))
    c_in = 2
    for b in range(cfg.num_blocks):
        for i, width in enumerate(cfg.branch_widths()):
            store.add(f"block{b}.branch{i}.w", (width, c_in, cfg.kernel))
            store.add(f"block{b}.branch{i}.b", (width,), init="const")
        store.add(f"block{b}.fuse.w", (cfg.hidden, cfg.hidden, 1))
        store.add(f"block{b}.fuse.b", (cfg.hidden,), init="const")
        store.add(f"block{b}.gate.w", (cfg.hidden, cfg.hidden, 1), init="xavier")
        store.add(f"block{b}.gate.b", (cfg.hidden,), init="const")
        c_in = cfg.hidden
    store.add("head.w", (1, cfg.hidden, 1), init="xavier")
    store.add("head.b", (1,), init="const")
    return store


def selector_input(days_mgdl: np.ndarray, P: int = PE_DIM) -> np.ndarray:
    """Stack normalised CGM and the time-of-day encoding: (n_days, 2, T)."""
    days = np.atleast_2d(np.asarray(days_mgdl, dtype=np.float64))
    pe = time_encoding(days.shape[1], P)
    return np.stack([normalize_glucose(days), np.broadcast_to(pe, days.shape)], axis=1)


def aetcn_logits(x: Tensor, cfg: AetcnConfig, store: ParamStore) -> Tensor:
    if x.ndim != 3 or x.shape[1] != 2:
        raise DimensionError(f"selector input must be (N, 2, T), got {x.shape}")
    h = x
    for b in range(cfg.num_blocks):
        branches = [
            ops.conv1d_dilated(h, store[f"block{b}.branch{i}.w"], dilation=d, bias=store[f"block{b}.branch{i}.b"])
            for i, d in enumerate(cfg.dilations)
        ]
        fused = ops.conv1d_dilated(ops.concat(branches, axis=1), store[f"block{b}.fuse.w"], bias=store[f"block{b}.fuse.b"])
        gate = ops.sigmoid(ops.conv1d_dilated(fused, store[f"block{b}.gate.w"], bias=store[f"block{b}.gate.b"]))
        h = ops.mul(fused, gate)
    logits = ops.conv1d_dilated(h, store["head.w"], bias=store["head.b"])
    return ops.reshape(logits, (logits.shape[0], logits.shape[2]))


def aetcn_forward(x, cfg: AetcnConfig, store: ParamStore) -> np.ndarray:
    """Per-slot importance scores in [0, 1]; accepts (2, T) or (N, 2, T)."""
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    with no_grad():
        s = ops.sigmoid(aetcn_logits(Tensor(arr), cfg, store)).data
    return s[0] if single else s


def make_selector_targets(observed_slots, T: int = SLOTS_PER_DAY, tolerance: int = 3) -> np.ndarray:
    """1 at each observed slot, decaying linearly to 0 at +-tolerance; overlaps take the max."""
    target = np.zeros(T)
    t = np.arange(T)
    for slot in observed_slots:
        slot = int(slot)
        if not 0 <= slot < T:
            raise ParameterError(f"slot {slot} outside [0, {T})")
        if tolerance <= 0:
            tent = (t == slot).astype(float)
        else:
            tent = np.clip(1.0 - np.abs(t - slot) / tolerance, 0.0, 1.0)
        np.maximum(target, tent, out=target)
    return target


@dataclass
class TrainedSelector:
    cfg: AetcnConfig
    store: ParamStore
    loss_trace: list = field(default_factory=list)

    def score_days(self, days_mgdl: np.ndarray) -> np.ndarray:
        return aetcn_forward(selector_input(days_mgdl, self.cfg.P), self.cfg, self.store)

    def select(self, day_mgdl: np.ndarray, constraint: SelectionConstraint = SelectionConstraint()) -> list[int]:
        return select_topk_separated(self.score_days(day_mgdl[None])[0], constraint)

    def save(self, path) -> None:
        write_params(path, MAGIC, self.cfg.to_ints(), self.store.flat())

    @classmethod
    def load(cls, path) -> "TrainedSelector":
        ints, values = read_params(path, MAGIC)
        cfg = AetcnConfig.from_ints(ints)
        store = init_params(cfg)
        store.load_flat(values)
        return cls(cfg, store)


def train_selector(
    pairs,
    cfg: AetcnConfig = AetcnConfig(),
    epochs: int = 200,
    seed: int = 0,
    lr: float = 3e-3,
    batch_size: int | None = None,
) -> TrainedSelector:
    """Fit scores to soft targets by mean binary cross-entropy with Adam.

    ``pairs`` is a sequence of ``(input (2, T), target (T,))``.
    """
    pairs = list(pairs)
    if not pairs:
        raise ParameterError("train_selector needs at least one (input, target) pair")
    X = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
    Y = np.stack([np.asarray(p[1], dtype=np.float64) for p in pairs])
    store = init_params(cfg, seed)
    opt = Adam(store.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    n = len(X)
    bs = n if batch_size is None else max(1, min(batch_size, n))
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            opt.zero_grad()
            loss = ops.bce_with_logits(aetcn_logits(Tensor(X[idx]), cfg, store), Y[idx])
            if not np.isfinite(loss.data):
                raise NumericalError(f"selector loss became {float(loss.data)} at epoch {epoch + 1}")
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        trace.append(total / n)
    return TrainedSelector(cfg, store, trace)


def selector_bce(selector: TrainedSelector, pairs) -> float:
    X = np.stack([p[0] for p in pairs])
    Y = np.stack([p[1] for p in pairs])
    with no_grad():
        return float(ops.bce_with_logits(aetcn_logits(Tensor(X), selector.cfg, selector.store), Y).data)
