"""End-to-end experiment runner: data, selector, sampling, training, evaluation, artifacts."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from glyco.config import dump_config, output_root
from glyco.data import (
    Dataset,
    SyntheticProfile,
    behavioral_sample,
    build_dataset,
    generate_corpus,
    ingest_cgm_csv,
    ingest_smbg_csv,
)
from glyco.domain import SmbgSample
from glyco.dpanet import DpaConfig, LossWeights, ResnetPathConfig, ScaConfig
from glyco.errors import ConfigurationError, ExperimentError, GlycoError, ValidationError
from glyco.evaluation import EvalReport, baseline_no_interp, evaluate
from glyco.sampling import SamplingPlan
from glyco.selector import AetcnConfig, TrainedSelector, make_selector_targets, selector_input, train_selector
from glyco.training import TrainConfig, TrainResult, to_arrays, train

log = logging.getLogger(__name__)

SELECTOR_SEED_OFFSET = 1_000_003  # keeps selector-training patients disjoint from the main corpus


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except ExperimentError:
        raise
    except (GlycoError, OSError, ValueError, FloatingPointError) as exc:
        raise ExperimentError(name, exc) from exc


# --------------------------------------------------------------------------
# config -> objects
# --------------------------------------------------------------------------


def model_config(cfg: dict) -> DpaConfig:
    return DpaConfig(
        sca=ScaConfig(
            channels=cfg["model.sca.channels"],
            reduction_c=cfg["model.sca.reduction_c"],
            reduction_s=cfg["model.sca.reduction_s"],
            blocks=cfg["model.sca.blocks"],
        ),
        resnet=ResnetPathConfig(
            channels=tuple(cfg["model.resnet.channels"]),
            aspp_dilations=tuple(cfg["model.resnet.aspp_dilations"]),
            aspp_channels=cfg["model.resnet.aspp_channels"],
        ),
        t_pool=cfg["model.t_pool"],
    )


def train_config(cfg: dict, mode: str | None = None) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        seed=cfg["train.seed"],
        weights=LossWeights(cfg["loss.lambda_rc"], cfg["loss.lambda_tr"], cfg["loss.lambda_a"], cfg["loss.temperature"]),
        mode=mode or cfg["train.mode"],
    )


def sampling_plan(cfg: dict, gamma: float | None = None) -> SamplingPlan:
    return SamplingPlan(
        strategy=cfg["sampling.strategy"],
        rate=cfg["sampling.rate"],
        gamma_h=cfg["sampling.gamma_h"] if gamma is None else gamma,
        k_per_day=cfg["sampling.k_per_day"],
        delta=cfg["sampling.delta"],
        seed=cfg["sampling.seed"],
    )


def selector_config(cfg: dict) -> AetcnConfig:
    return AetcnConfig(num_blocks=cfg["selector.blocks"], hidden=cfg["selector.hidden"])


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def load_grids(cfg: dict):
    """Return (grids, real SMBG samples or None)."""
    if cfg["data.source"] == "synthetic":
        grids = generate_corpus(SyntheticProfile(), cfg["data.n_patients"], cfg["data.windows_per_patient"], cfg["data.seed"])
        return grids, None
    if cfg["data.source"] == "csv":
        if not cfg["data.cgm_csv"]:
            raise ConfigurationError("data.source = csv needs data.cgm_csv")
        grids, summary = ingest_cgm_csv(cfg["data.cgm_csv"])
        log.info("ingested %d windows, rejected %d", len(grids), len(summary["windows_rejected"]))
        real = None
        if cfg["data.smbg_csv"]:
            real, _ = ingest_smbg_csv(cfg["data.smbg_csv"], grids)
        return grids, real
    raise ConfigurationError(f"unknown data.source {cfg['data.source']!r}")


def selector_pairs(samples: list[SmbgSample], grids_by_key: dict):
    """One (input, tent target) pair per day of every paired CGM/SMBG window."""
    pairs = []
    for s in samples:
        cgm = grids_by_key[(s.patient_id, s.window_start)].values
        X = selector_input(cgm)
        for d in range(cgm.shape[0]):
            pairs.append((X[d], make_selector_targets(np.flatnonzero(s.observed[d]), cgm.shape[1])))
    return pairs


def simulated_pairs(cfg: dict):
    """Paired data from behaviourally sampled synthetic patients disjoint from the main corpus."""
    grids = generate_corpus(SyntheticProfile(), cfg["selector.n_patients"], 1, cfg["data.seed"] + SELECTOR_SEED_OFFSET)
    samples = [behavioral_sample(g, cfg["sampling.k_per_day"], seed=i) for i, g in enumerate(grids)]
    return selector_pairs(samples, {(g.patient_id, g.window_start): g for g in grids})


def obtain_selector(cfg: dict, grids, real) -> TrainedSelector:
    if cfg["selector.params"]:
        return TrainedSelector.load(cfg["selector.params"])
    if real:
        pairs = selector_pairs(real, {(g.patient_id, g.window_start): g for g in grids})
    else:
        pairs = simulated_pairs(cfg)
    return train_selector(
        pairs, selector_config(cfg), epochs=cfg["selector.epochs"], seed=cfg["selector.seed"], lr=cfg["selector.lr"],
        batch_size=32,
    )


def needs_selector(cfg: dict, gammas) -> bool:
    strategy = cfg["sampling.strategy"]
    return strategy == "active" or (strategy == "hybrid" and any(g > 0 for g in gammas))


def baseline_report(triples) -> EvalReport:
    pred = [baseline_no_interp(t.sample) for t in triples]
    return evaluate(pred, [t.label for t in triples])


def check_simplex(pred: np.ndarray, tag: str) -> None:
    if not (np.all(pred >= -1e-9) and np.allclose(pred.sum(axis=1), 1.0, atol=1e-9)):
        raise ValidationError(f"{tag}: predictions left the probability simplex")


@dataclass
class ModelRun:
    result: TrainResult
    report: EvalReport


def fit_and_evaluate(ds: Dataset, cfg: dict, mode: str) -> ModelRun:
    tr, va, te = (to_arrays(ds.subset(s)) for s in ("train", "val", "test"))
    result = train(tr, va, model_config(cfg), train_config(cfg, mode))
    pred = result.net.predict(te.x, mode)
    check_simplex(pred, mode)
    return ModelRun(result, evaluate(pred, te.tr))


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def _write_run(out: Path, tag: str, run: ModelRun) -> None:
    run.result.net.save(out / f"params_{tag}.bin")
    (out / f"report_{tag}.txt").write_text(run.report.to_text(tag))
    (out / f"scatter_{tag}.csv").write_text(run.report.scatter_csv())
    rows = ["epoch,total,rc,tr,a,val_rmse"]
    for i, (c, v) in enumerate(zip(run.result.components, run.result.val_rmse), 1):
        rows.append(f"{i},{c['total']:.8f},{c['rc']:.8f},{c['tr']:.8f},{c['a']:.8f},{v:.8f}")
    (out / f"trace_{tag}.csv").write_text("\n".join(rows) + "\n")


def run_experiment(cfg: dict, out_dir=None) -> dict[str, EvalReport]:
    """Run the configured experiment, write artifacts, return reports keyed by tag."""
    kind = cfg["experiment.kind"]
    if kind not in ("single", "ablation", "baseline", "gamma_sweep"):
        raise ConfigurationError(f"unknown experiment.kind {kind!r}")
    out = Path(out_dir) if out_dir is not None else output_root(cfg) / cfg["experiment.name"]
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))

    gammas = cfg["experiment.gammas"] if kind == "gamma_sweep" else [cfg["sampling.gamma_h"]]
    with stage("data"):
        grids, real = load_grids(cfg)
    selector = None
    if needs_selector(cfg, gammas):
        with stage("selector"):
            selector = obtain_selector(cfg, grids, real)
            if not cfg["selector.params"]:
                selector.save(out / "selector.bin")

    reports: dict[str, EvalReport] = {}
    for gamma in gammas:
        suffix = f"_gamma{gamma:g}" if kind == "gamma_sweep" else ""
        with stage("sampling"):
            ds = build_dataset(grids, sampling_plan(cfg, gamma), selector, seed=cfg["data.seed"])
            ds.write_manifest(out / f"manifest{suffix}.txt")
            (out / f"splits{suffix}.txt").write_text(ds.split_text())
        with stage("baseline"):
            rep = baseline_report(ds.subset("test"))
            reports[f"baseline{suffix}"] = rep
            (out / f"report_baseline{suffix}.txt").write_text(rep.to_text(f"baseline{suffix}"))
            (out / f"scatter_baseline{suffix}.csv").write_text(rep.scatter_csv())
        if kind == "baseline":
            continue
        modes = ("full", "lower-only", "upper-only") if kind == "ablation" else (cfg["train.mode"],)
        for mode in modes:
            with stage(f"train:{mode}{suffix}"):
                run = fit_and_evaluate(ds, cfg, mode)
            reports[f"{mode}{suffix}"] = run.report
            _write_run(out, f"{mode}{suffix}", run)

    summary = ["tag,n,overall_tr_rmse,overall_r2"]
    for tag, rep in reports.items():
        r2 = "undefined" if rep.overall_r2 is None else f"{rep.overall_r2:.4f}"
        summary.append(f"{tag},{rep.n},{rep.overall_rmse:.4f},{r2}")
    (out / "summary.csv").write_text("\n".join(summary) + "\n")
    return reports
