"""Dual-path attention network.

Upper path: stem convolution, stacked spatial/channel attention blocks and a
1x1 head that reconstructs a dense glucose grid. Lower path: residual
backbone, atrous pyramid pooling and a softmax head that predicts
(TAR, TIR, TBR) directly. Both read the same 3-channel input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from glyco.agp import DEFAULT_THRESHOLDS, Thresholds, compute_tr_soft
from glyco.autodiff import Tensor, no_grad, ops
from glyco.domain import GLUCOSE_SCALE
from glyco.errors import DimensionError, NumericalError, ParameterError
from glyco.nn import ParamStore
from glyco.params_io import read_params, write_params

MAGIC = b"DPANET1"
MODES = ("full", "lower-only", "upper-only")


@dataclass(frozen=True)
class ScaConfig:
    channels: int = 32
    reduction_c: int = 4
    reduction_s: int = 4
    blocks: int = 2

    def __post_init__(self):
        if self.channels < 1 or self.blocks < 1:
            raise ParameterError("channels and blocks must be >= 1")
        if self.channels % self.reduction_c or self.channels % self.reduction_s:
            raise ParameterError(
                f"channels {self.channels} must be divisible by reduction_c {self.reduction_c} "
                f"and reduction_s {self.reduction_s}"
            )


@dataclass(frozen=True)
class ResnetPathConfig:
    channels: tuple = (16, 32, 64, 128)
    aspp_dilations: tuple = (6, 12, 18)
    aspp_channels: int = 32

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "aspp_dilations", tuple(int(d) for d in self.aspp_dilations))
        if not self.channels or min(self.channels) < 1:
            raise ParameterError("need at least one residual layer with positive width")
        if len(self.aspp_dilations) != 3 or min(self.aspp_dilations) < 1:
            raise ParameterError("ASPP uses exactly three positive atrous rates (plus 1x1 and pooling branches)")


@dataclass(frozen=True)
class LossWeights:
    rc: float = 1.0
    tr: float = 1.0
    a: float = 0.5
    temperature: float = 5.0

    def __post_init__(self):
        if min(self.rc, self.tr, self.a) < 0:
            raise ParameterError("loss weights must be non-negative")
        if self.temperature <= 0:
            raise ParameterError("temperature must be positive")


@dataclass(frozen=True)
class DpaConfig:
    sca: ScaConfig = field(default_factory=ScaConfig)
    resnet: ResnetPathConfig = field(default_factory=ResnetPathConfig)
    t_pool: int = 1  # average-pool factor along time before both paths

    def __post_init__(self):
        if self.t_pool < 1:
            raise ParameterError("t_pool must be >= 1")

    def to_ints(self) -> list[int]:
        s, r = self.sca, self.resnet
        return [s.channels, s.reduction_c, s.reduction_s, s.blocks, self.t_pool, r.aspp_channels,
                len(r.channels), *r.channels, *r.aspp_dilations]

    @classmethod
    def from_ints(cls, v) -> "DpaConfig":
        n = v[6]
        return cls(
            sca=ScaConfig(*v[:4]),
            resnet=ResnetPathConfig(channels=tuple(v[7 : 7 + n]), aspp_dilations=tuple(v[7 + n : 10 + n]), aspp_channels=v[5]),
            t_pool=v[4],
        )


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


def add_sca_params(store: ParamStore, cfg: ScaConfig, in_ch: int = 3) -> None:
    C = cfg.channels
    cr, cs = C // cfg.reduction_c, C // cfg.reduction_s
    store.add("sca.stem.w", (C, in_ch, 3, 3))
    store.add("sca.stem.b", (C,), init="const")
    for i in range(cfg.blocks):
        p = f"sca.block{i}"
        store.add(f"{p}.ca.w1", (cr, C))
        store.add(f"{p}.ca.w2", (C, cr), init="xavier")
        for name, out in (("q", cs), ("k", cs), ("v", C)):
            store.add(f"{p}.sa.{name}.w", (out, C, 1, 1), init="xavier")
            store.add(f"{p}.sa.{name}.b", (out,), init="const")
        store.add(f"{p}.gamma1", (1,), init="const")
        store.add(f"{p}.gamma2", (1,), init="const")
    store.add("sca.head.w", (1, C, 1, 1), init="xavier")
    store.add("sca.head.b", (1,), init="const")


def add_resnet_params(store: ParamStore, cfg: ResnetPathConfig, in_ch: int = 3) -> None:
    c_in = in_ch
    for i, c in enumerate(cfg.channels):
        p = f"res.layer{i}"
        store.add(f"{p}.conv1.w", (c, c_in, 3, 3))
        store.add_bn(f"{p}.bn1", c)
        store.add(f"{p}.conv2.w", (c, c, 3, 3))
        store.add_bn(f"{p}.bn2", c)
        if c != c_in:
            store.add(f"{p}.proj.w", (c, c_in, 1, 1), init="xavier")
        c_in = c
    a = cfg.aspp_channels
    store.add("res.aspp.b0.w", (a, c_in, 1, 1))
    store.add_bn("res.aspp.b0.bn", a)
    for j in range(len(cfg.aspp_dilations)):
        store.add(f"res.aspp.b{j + 1}.w", (a, c_in, 3, 3))
        store.add_bn(f"res.aspp.b{j + 1}.bn", a)
    store.add("res.aspp.pool.w", (a, c_in), init="he")
    store.add("res.aspp.pool.b", (a,), init="const")
    store.add("res.aspp.fuse.w", (a, 5 * a, 1, 1))
    store.add_bn("res.aspp.fuse.bn", a)
    store.add("res.fc.w", (3, a), init="xavier")
    store.add("res.fc.b", (3,), init="const")


def init_params(cfg: DpaConfig, seed: int = 0) -> ParamStore:
    store = ParamStore(np.random.default_rng(seed))
    add_sca_params(store, cfg.sca)
    add_resnet_params(store, cfg.resnet)
    return store


# --------------------------------------------------------------------------
# upper path
# --------------------------------------------------------------------------


def _batched4(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected [C,D,T] or [N,C,D,T], got {x.shape}")


def channel_attention(feat: Tensor, store: ParamStore, prefix: str) -> Tensor:
    """Per-channel weights in (0, 1): shared two-layer MLP over average and max pooled descriptors."""
    xb, single = _batched4(feat)
    w1, w2 = store[f"{prefix}.ca.w1"], store[f"{prefix}.ca.w2"]
    if xb.shape[1] != w1.shape[1]:
        raise DimensionError(f"channel attention expects {w1.shape[1]} channels, got {xb.shape[1]}")

    def mlp(z):
        return ops.linear(ops.relu(ops.linear(z, w1)), w2)

    s = ops.sigmoid(ops.add(mlp(ops.pool2d(xb, "avg")), mlp(ops.pool2d(xb, "max"))))
    return ops.reshape(s, (s.shape[1],)) if single else s


def attention_map(feat: Tensor, store: ParamStore, prefix: str) -> tuple[Tensor, Tensor]:
    """Row-stochastic position-to-position map A [N,P,P] and flattened values V' [N,C,P]."""
    xb, _ = _batched4(feat)
    n, c, d, t = xb.shape
    P = d * t

    def proj(name):
        return ops.conv2d(xb, store[f"{prefix}.sa.{name}.w"], bias=store[f"{prefix}.sa.{name}.b"])

    q, k, v = proj("q"), proj("k"), proj("v")
    cq = q.shape[1]
    q_flat = ops.transpose(ops.reshape(q, (n, cq, P)), (0, 2, 1))  # [N,P,C']
    k_flat = ops.reshape(k, (n, cq, P))  # [N,C',P]
    A = ops.softmax(ops.matmul(q_flat, k_flat), axis=-1)
    return A, ops.reshape(v, (n, c, P))


def spatial_attention(feat: Tensor, store: ParamStore, prefix: str) -> Tensor:
    """gamma1 * reshape(V' A) + feat."""
    xb, single = _batched4(feat)
    A, v_flat = attention_map(xb, store, prefix)
    o = ops.reshape(ops.matmul(v_flat, A), xb.shape)
    out = ops.add(ops.mul(store[f"{prefix}.gamma1"], o), xb)
    return ops.reshape(out, out.shape[1:]) if single else out


def fuse(feat: Tensor, sa: Tensor, s_channel: Tensor, gamma2: Tensor) -> Tensor:
    """gamma2 * feat + s_channel (broadcast over D, T) * sa."""
    return ops.add(ops.mul(gamma2, feat), ops.broadcast_mul(sa, s_channel))


def sca_block(feat: Tensor, store: ParamStore, index: int) -> Tensor:
    p = f"sca.block{index}"
    s = channel_attention(feat, store, p)
    sa = spatial_attention(feat, store, p)
    return fuse(feat, sa, s, store[f"{p}.gamma2"])


def pool_time(x: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping groups of ``factor`` slots along the last axis."""
    if factor == 1:
        return x
    T = x.shape[-1]
    if T % factor:
        raise DimensionError(f"T={T} is not divisible by the time pooling factor {factor}")
    return x.reshape(x.shape[:-1] + (T // factor, factor)).mean(axis=-1)


def sca_path(x: Tensor, cfg: DpaConfig, store: ParamStore, out_hw: tuple[int, int] | None = None) -> Tensor:
    """Reconstructed grid in normalised units, [N,D,T] (or [D,T] for unbatched input)."""
    xb, single = _batched4(x)
    h = ops.conv2d(xb, store["sca.stem.w"], padding=1, bias=store["sca.stem.b"])
    for i in range(cfg.sca.blocks):
        h = sca_block(h, store, i)
    g = ops.conv2d(h, store["sca.head.w"], bias=store["sca.head.b"])  # [N,1,D,T']
    if out_hw is not None and tuple(out_hw) != g.shape[-2:]:
        g = ops.bilinear_upsample(g, out_hw)
    g = ops.reshape(g, (g.shape[0],) + g.shape[2:])
    return ops.reshape(g, g.shape[1:]) if single else g


# --------------------------------------------------------------------------
# lower path
# --------------------------------------------------------------------------


def residual_layer(x: Tensor, store: ParamStore, i: int, training: bool) -> Tensor:
    p = f"res.layer{i}"
    h = ops.relu(store.bn(f"{p}.bn1", ops.conv2d(x, store[f"{p}.conv1.w"], padding=1), training))
    h = ops.relu(store.bn(f"{p}.bn2", ops.conv2d(h, store[f"{p}.conv2.w"], padding=1), training))
    skip = ops.conv2d(x, store[f"{p}.proj.w"]) if f"{p}.proj.w" in store else x
    return ops.add(h, skip)


def aspp(x: Tensor, cfg: ResnetPathConfig, store: ParamStore, training: bool) -> Tensor:
    hw = x.shape[-2:]
    branches = [ops.relu(store.bn("res.aspp.b0.bn", ops.conv2d(x, store["res.aspp.b0.w"]), training))]
    for j, d in enumerate(cfg.aspp_dilations):
        conv = ops.conv2d(x, store[f"res.aspp.b{j + 1}.w"], padding=d, dilation=d)
        branches.append(ops.relu(store.bn(f"res.aspp.b{j + 1}.bn", conv, training)))
    pooled = ops.relu(ops.linear(ops.pool2d(x, "avg"), store["res.aspp.pool.w"], store["res.aspp.pool.b"]))
    n, a = pooled.shape
    branches.append(ops.bilinear_upsample(ops.reshape(pooled, (n, a, 1, 1)), hw))
    cat = ops.concat(branches, axis=1)
    return ops.relu(store.bn("res.aspp.fuse.bn", ops.conv2d(cat, store["res.aspp.fuse.w"]), training))


def resnet_logits(x: Tensor, cfg: ResnetPathConfig, store: ParamStore, training: bool = False) -> Tensor:
    xb, _ = _batched4(x)
    h = xb
    for i in range(len(cfg.channels)):
        h = residual_layer(h, store, i, training)
    v = ops.pool2d(aspp(h, cfg, store, training), "avg")
    return ops.linear(v, store["res.fc.w"], store["res.fc.b"])


def resnet_path(x: Tensor, cfg: ResnetPathConfig, store: ParamStore, training: bool = False) -> Tensor:
    """(TAR, TIR, TBR) on the simplex, [N,3] (or [3] for unbatched input)."""
    out = ops.softmax(resnet_logits(x, cfg, store, training), axis=-1)
    return ops.reshape(out, (3,)) if x.ndim == 3 else out


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------


@dataclass
class LossParts:
    total: Tensor
    rc: Tensor
    tr: Tensor
    a: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("total", "rc", "tr", "a")}


def total_loss(
    recon: Tensor | None,
    tr_lower: Tensor | None,
    grid_norm,
    tr_true,
    weights: LossWeights = LossWeights(),
    th: Thresholds = DEFAULT_THRESHOLDS,
) -> LossParts:
    """Weighted reconstruction, direct-metric and alignment losses.

    ``recon`` and ``grid_norm`` are normalised grids; ``tr_lower`` and
    ``tr_true`` are (TAR, TIR, TBR) rows. A missing path zeroes the terms it feeds.
    """
    zero = Tensor(np.array(0.0))
    l_rc = ops.mse(recon, np.asarray(grid_norm, dtype=np.float64)) if recon is not None else zero
    l_tr = ops.mse(tr_lower, np.asarray(tr_true, dtype=np.float64)) if tr_lower is not None else zero
    if recon is not None and tr_lower is not None:
        tr_upper = compute_tr_soft(ops.mul(recon, GLUCOSE_SCALE), th, weights.temperature)
        l_a = ops.mse(tr_upper, tr_lower)
    else:
        l_a = zero
    for name, part in (("reconstruction", l_rc), ("direct-metric", l_tr), ("alignment", l_a)):
        if not np.isfinite(part.data):
            raise NumericalError(f"{name} loss is {float(part.data)}")
    total = ops.add(ops.add(ops.mul(l_rc, weights.rc), ops.mul(l_tr, weights.tr)), ops.mul(l_a, weights.a))
    return LossParts(total, l_rc, l_tr, l_a)


# --------------------------------------------------------------------------
# model wrapper
# --------------------------------------------------------------------------


class DpaNet:
    """Parameters plus forward helpers for both paths."""

    def __init__(self, cfg: DpaConfig = DpaConfig(), seed: int = 0):
        self.cfg = cfg
        self.store = init_params(cfg, seed)

    def num_parameters(self) -> int:
        return self.store.count()

    def forward(self, x: np.ndarray, mode: str = "full", training: bool = False) -> tuple[Tensor | None, Tensor | None]:
        """Return (reconstruction [N,D,T] normalised, TR from the lower path [N,3]) for input [N,3,D,T]."""
        if mode not in MODES:
            raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"network input must be [N,3,D,T], got {x.shape}")
        xt = Tensor(pool_time(x, self.cfg.t_pool))
        recon = sca_path(xt, self.cfg, self.store, out_hw=x.shape[-2:]) if mode != "lower-only" else None
        tr = resnet_path(xt, self.cfg.resnet, self.store, training) if mode != "upper-only" else None
        return recon, tr

    def recalibrate_bn(self, x: np.ndarray, batch: int = 8) -> None:
        """Replace running batchnorm statistics by their average over ``x`` under the current weights."""
        if self.cfg is None or not self.store.stats or len(x) == 0:
            return
        saved = {k: st.momentum for k, st in self.store.stats.items()}
        with no_grad():
            for k, start in enumerate(range(0, len(x), batch)):
                for st in self.store.stats.values():
                    st.momentum = 1.0 / (k + 1)
                xt = Tensor(pool_time(np.asarray(x[start : start + batch], dtype=np.float64), self.cfg.t_pool))
                resnet_logits(xt, self.cfg.resnet, self.store, training=True)
        for k, st in self.store.stats.items():
            st.momentum = saved[k]

    def predict(self, x: np.ndarray, mode: str = "full", th: Thresholds = DEFAULT_THRESHOLDS, batch: int = 8) -> np.ndarray:
        """(TAR, TIR, TBR) per sample. Upper-only reads metrics off the reconstruction by hard counting."""
        rows = []
        with no_grad():
            for i in range(0, len(x), batch):
                recon, tr = self.forward(x[i : i + batch], mode, training=False)
                if mode == "upper-only":
                    mgdl = recon.data * GLUCOSE_SCALE
                    above = (mgdl > th.tau_high).mean(axis=(1, 2))
                    below = (mgdl < th.tau_low).mean(axis=(1, 2))
                    rows.append(np.stack([above, 1.0 - above - below, below], axis=1))
                else:
                    rows.append(tr.data)
        return np.concatenate(rows) if rows else np.zeros((0, 3))

    def save(self, path) -> None:
        write_params(path, MAGIC, self.cfg.to_ints(), self.store.flat())

    @classmethod
    def load(cls, path) -> "DpaNet":
        ints, values = read_params(path, MAGIC)
        net = cls(DpaConfig.from_ints(ints))
        net.store.load_flat(values)
        return net
