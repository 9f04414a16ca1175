"""Error metrics for (TAR, TIR, TBR) predictions and the observed-points baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from glyco.agp import DEFAULT_THRESHOLDS, TARGETS, Thresholds, TrVector, count_ranges
from glyco.domain import SmbgSample
from glyco.errors import DimensionError, UndefinedBaselineError


def _as_matrix(rows) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        m = np.asarray(rows, dtype=np.float64)
    else:
        m = np.array([r.as_array() if isinstance(r, TrVector) else np.asarray(r, dtype=np.float64) for r in rows])
    if m.ndim != 2 or m.shape[1] != 3:
        raise DimensionError(f"expected N x 3 (TAR, TIR, TBR) rows, got shape {m.shape}")
    return m


@dataclass
class EvalReport:
    n: int
    rmse: dict
    mae: dict
    r2: dict  # None where the truth is constant
    overall_rmse: float
    overall_mae: float
    overall_r2: float | None
    r2_undefined: list = field(default_factory=list)
    pred: np.ndarray | None = field(default=None, repr=False)
    truth: np.ndarray | None = field(default=None, repr=False)

    def signed_error(self) -> dict:
        d = self.pred - self.truth
        return {t: float(d[:, j].mean()) for j, t in enumerate(TARGETS)}

    def to_text(self, title: str = "report") -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        lines = [f"# {title}", f"n = {self.n}"]
        for t in TARGETS:
            lines.append(f"{t}: rmse={fmt(self.rmse[t])} mae={fmt(self.mae[t])} r2={fmt(self.r2[t])}")
        lines.append(f"overall_tr_rmse = {fmt(self.overall_rmse)}")
        lines.append(f"overall_mae = {fmt(self.overall_mae)}")
        lines.append(f"overall_r2 = {fmt(self.overall_r2)}")
        bias = self.signed_error()
        lines.append("mean_signed_error: " + " ".join(f"{t}={bias[t]:.4f}" for t in TARGETS))
        if self.r2_undefined:
            lines.append("r2_undefined_for = " + ",".join(self.r2_undefined))
        return "\n".join(lines) + "\n"

    def scatter_csv(self) -> str:
        rows = ["target,truth,pred"]
        for j, t in enumerate(TARGETS):
            rows += [f"{t},{a:.6f},{b:.6f}" for a, b in zip(self.truth[:, j], self.pred[:, j])]
        return "\n".join(rows) + "\n"


def evaluate(pred, truth) -> EvalReport:
    """Per-target RMSE, MAE and R^2 plus unweighted means over the three targets."""
    p, y = _as_matrix(pred), _as_matrix(truth)
    if p.shape != y.shape:
        raise DimensionError(f"prediction {p.shape} and truth {y.shape} differ in size")
    if len(y) < 2:
        raise DimensionError("evaluation needs at least two samples")
    rmse, mae, r2, undefined = {}, {}, {}, []
    for j, t in enumerate(TARGETS):
        err = p[:, j] - y[:, j]
        rmse[t] = float(np.sqrt(np.mean(err**2)))
        mae[t] = float(np.mean(np.abs(err)))
        ss_tot = float(np.sum((y[:, j] - y[:, j].mean()) ** 2))
        if ss_tot == 0.0:
            r2[t] = None
            undefined.append(t)
        else:
            r2[t] = 1.0 - float(np.sum(err**2)) / ss_tot
    defined = [v for v in r2.values() if v is not None]
    return EvalReport(
        n=len(y),
        rmse=rmse,
        mae=mae,
        r2=r2,
        overall_rmse=float(np.mean(list(rmse.values()))),
        overall_mae=float(np.mean(list(mae.values()))),
        overall_r2=float(np.mean(defined)) if defined else None,
        r2_undefined=undefined,
        pred=p,
        truth=y,
    )


def baseline_no_interp(sample: SmbgSample, th: Thresholds = DEFAULT_THRESHOLDS) -> TrVector:
    """Time in ranges over the observed fingersticks only."""
    values = sample.observed_values()
    if values.size == 0:
        raise UndefinedBaselineError("no observed SMBG points: the baseline is undefined")
    above, inside, below = count_ranges(values, th)
    n = values.size
    return TrVector(above / n, inside / n, below / n)
