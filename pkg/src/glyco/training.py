"""Mini-batch training of the dual-path network with best-validation selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from glyco.autodiff import Adam, no_grad
from glyco.domain import assemble_input, build_positional_encoding, normalize_glucose
from glyco.dpanet import MODES, DpaConfig, DpaNet, LossWeights, total_loss
from glyco.errors import NumericalError, ParameterError
from glyco.evaluation import evaluate

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    mode: str = "full"

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise ParameterError(f"unknown ablation mode {self.mode!r}; expected one of {MODES}")

    def effective_weights(self) -> LossWeights:
        """Switch off the terms whose path is not trained in this mode."""
        w = self.weights
        if self.mode == "lower-only":
            return LossWeights(rc=0.0, tr=w.tr, a=0.0, temperature=w.temperature)
        if self.mode == "upper-only":
            return LossWeights(rc=w.rc, tr=0.0, a=0.0, temperature=w.temperature)
        return w


@dataclass
class Arrays:
    x: np.ndarray  # [N,3,D,T]
    g: np.ndarray  # [N,D,T] normalised ground truth
    tr: np.ndarray  # [N,3]

    def __len__(self) -> int:
        return len(self.x)


def to_arrays(triples) -> Arrays:
    if not triples:
        return Arrays(np.zeros((0, 3, 1, 1)), np.zeros((0, 1, 1)), np.zeros((0, 3)))
    D, T = triples[0].grid.values.shape
    pe = build_positional_encoding(D, T)
    return Arrays(
        np.stack([assemble_input(t.sample, pe) for t in triples]),
        np.stack([normalize_glucose(t.grid.values) for t in triples]),
        np.stack([t.label.as_array() for t in triples]),
    )


@dataclass
class TrainResult:
    net: DpaNet
    train_loss: list
    val_rmse: list
    components: list
    best_epoch: int


def train(train_set: Arrays, val_set: Arrays, net_cfg: DpaConfig, cfg: TrainConfig) -> TrainResult:
    """Adam over shuffled mini-batches; returns the parameters with the lowest validation RMSE."""
    if len(train_set) == 0:
        raise ParameterError("training split is empty")
    net = DpaNet(net_cfg, seed=cfg.seed)
    weights = cfg.effective_weights()
    opt = Adam(net.store.parameters(), lr=cfg.lr)
    rng = np.random.default_rng((cfg.seed, 0x7A))
    n = len(train_set)
    bs = min(cfg.batch_size, n)
    train_loss, val_rmse, components = [], [], []
    best, best_epoch, best_rmse = None, 0, np.inf
    strikes = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = {"total": 0.0, "rc": 0.0, "tr": 0.0, "a": 0.0}
        for start in range(0, n, bs):
            idx = np.sort(order[start : start + bs])
            opt.zero_grad()
            recon, tr = net.forward(train_set.x[idx], cfg.mode, training=True)
            parts = total_loss(recon, tr, train_set.g[idx], train_set.tr[idx], weights)
            parts.total.backward()
            opt.step()
            for k, v in parts.values().items():
                sums[k] += v * len(idx)
        epoch_loss = {k: v / n for k, v in sums.items()}
        train_loss.append(epoch_loss["total"])
        components.append(epoch_loss)
        if cfg.mode != "upper-only":
            net.recalibrate_bn(train_set.x, bs)
        if len(val_set) >= 2:
            rmse = evaluate(net.predict(val_set.x, cfg.mode), val_set.tr).overall_rmse
        else:
            rmse = epoch_loss["total"]
        val_rmse.append(rmse)
        if rmse < best_rmse:
            best, best_epoch, best_rmse = net.store.snapshot(), epoch, rmse
        log.info("epoch %d loss %.6f val_rmse %.6f", epoch, epoch_loss["total"], rmse)
        strikes = strikes + 1 if epoch_loss["total"] > DIVERGENCE_FACTOR * train_loss[0] else 0
        if strikes >= DIVERGENCE_PATIENCE:
            trace = ", ".join(f"{v:.4g}" for v in train_loss)
            raise NumericalError(f"training diverged at epoch {epoch} (loss trace: {trace})")
    net.store.load_flat(best)
    return TrainResult(net, train_loss, val_rmse, components, best_epoch)


def predict_arrays(net: DpaNet, data: Arrays, mode: str = "full") -> np.ndarray:
    with no_grad():
        return net.predict(data.x, mode)
