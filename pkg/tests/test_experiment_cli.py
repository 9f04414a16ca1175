import numpy as np
import pytest

from glyco.cli import main
from glyco.config import parse_config
from glyco.data import ingest_cgm_csv, ingest_smbg_csv
from glyco.errors import ExperimentError
from glyco.experiment import needs_selector, run_experiment

TINY_MODEL = """
model.sca.channels = 4
model.sca.reduction_c = 2
model.sca.reduction_s = 2
model.sca.blocks = 1
model.resnet.channels = 4
model.resnet.aspp_channels = 4
model.resnet.aspp_dilations = 1,2,3
model.t_pool = 24
data.n_patients = 10
train.epochs = 1
train.batch_size = 4
selector.n_patients = 2
selector.epochs = 2
selector.hidden = 8
"""


def tiny(extra=""):
    return parse_config(TINY_MODEL + extra)


class TestRunExperiment:
    def test_baseline_kind(self, tmp_path):
        reports = run_experiment(tiny("experiment.kind = baseline\nsampling.strategy = random"), tmp_path)
        assert list(reports) == ["baseline"]
        names = {p.name for p in tmp_path.iterdir()}
        assert {"config.txt", "manifest.txt", "splits.txt", "report_baseline.txt", "summary.csv"} <= names
        assert not any(n.startswith("params_") for n in names)
        assert "selector.bin" not in names

    def test_ablation_shares_splits(self, tmp_path):
        reports = run_experiment(tiny("experiment.kind = ablation"), tmp_path)
        assert set(reports) == {"baseline", "full", "lower-only", "upper-only"}
        ns = {r.n for r in reports.values()}
        assert len(ns) == 1
        summary = (tmp_path / "summary.csv").read_text().splitlines()
        assert summary[0] == "tag,n,overall_tr_rmse,overall_r2" and len(summary) == 5
        for mode in ("full", "lower-only", "upper-only"):
            assert (tmp_path / f"params_{mode}.bin").exists()
            trace = (tmp_path / f"trace_{mode}.csv").read_text().splitlines()
            assert trace[0] == "epoch,total,rc,tr,a,val_rmse" and len(trace) == 2

    def test_gamma_sweep_tags(self, tmp_path):
        cfg = tiny("experiment.kind = gamma_sweep\nexperiment.gammas = 0,0.5\nsampling.strategy = hybrid")
        reports = run_experiment(cfg, tmp_path)
        assert set(reports) == {"baseline_gamma0", "full_gamma0", "baseline_gamma0.5", "full_gamma0.5"}
        assert (tmp_path / "selector.bin").exists()
        m0 = (tmp_path / "manifest_gamma0.txt").read_text()
        m5 = (tmp_path / "manifest_gamma0.5.txt").read_text()
        assert m0 != m5

    def test_config_echoed(self, tmp_path):
        cfg = tiny("experiment.kind = baseline")
        run_experiment(cfg, tmp_path)
        assert parse_config((tmp_path / "config.txt").read_text()) == cfg

    def test_stage_named_on_failure(self, tmp_path):
        cfg = tiny("experiment.kind = baseline\ndata.source = csv\ndata.cgm_csv = " + str(tmp_path / "missing.csv"))
        with pytest.raises(ExperimentError) as info:
            run_experiment(cfg, tmp_path)
        assert info.value.stage == "data"

    def test_too_few_patients(self, tmp_path):
        with pytest.raises(ExperimentError, match="sampling"):
            run_experiment(tiny("experiment.kind = baseline\ndata.n_patients = 2"), tmp_path)

    @pytest.mark.parametrize(
        "strategy,gammas,expected",
        [("random", [0.4], False), ("hybrid", [0.0], False), ("hybrid", [0.0, 0.2], True), ("active", [0.0], True)],
    )
    def test_needs_selector(self, strategy, gammas, expected):
        assert needs_selector(tiny(f"sampling.strategy = {strategy}"), gammas) is expected


class TestCli:
    def test_generate_and_metrics(self, tmp_path, capsys):
        cgm, smbg = tmp_path / "cgm.csv", tmp_path / "smbg.csv"
        assert main(["generate", "--patients", "3", "--out", str(cgm), "--smbg-out", str(smbg)]) == 0
        grids, summary = ingest_cgm_csv(cgm)
        assert len(grids) == 3 and not summary["windows_rejected"]
        samples, _ = ingest_smbg_csv(smbg, grids)
        assert all(np.all(s.observed.sum(axis=1) == 5) for s in samples)
        capsys.readouterr()
        assert main(["metrics", "--cgm", str(cgm)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 3 and lines[0].startswith("syn0000@0\ttar=")

    def test_sample_and_baseline(self, tmp_path, capsys):
        cgm, smbg = tmp_path / "cgm.csv", tmp_path / "smbg.csv"
        main(["generate", "--patients", "3", "--out", str(cgm)])
        assert main(["sample", "--cgm", str(cgm), "--rate", "0.05", "--out", str(smbg)]) == 0
        capsys.readouterr()
        assert main(["baseline", "--cgm", str(cgm), "--smbg", str(smbg)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("# baseline") and "overall_tr_rmse" in out

    def test_select_train_apply(self, tmp_path):
        cgm, smbg, params, picks = (tmp_path / n for n in ("cgm.csv", "smbg.csv", "sel.bin", "picks.csv"))
        main(["generate", "--patients", "2", "--out", str(cgm), "--smbg-out", str(smbg)])
        args = ["select", "train", "--cgm", str(cgm), "--smbg", str(smbg), "--out", str(params)]
        assert main(args + ["--set", "selector.epochs=2", "--set", "selector.hidden=8"]) == 0
        assert main(["select", "apply", "--cgm", str(cgm), "--params", str(params), "--k", "3", "--out", str(picks)]) == 0
        grids, _ = ingest_cgm_csv(cgm)
        samples, _ = ingest_smbg_csv(picks, grids)
        assert all(np.all(s.observed.sum(axis=1) == 3) for s in samples)

    def test_train_eval_report(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("GLYCO_OUT_DIR", str(tmp_path / "out"))
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(TINY_MODEL + "experiment.name = t\n")
        assert main(["train", "--config", str(cfg)]) == 0
        run_dir = tmp_path / "out" / "t"
        assert (run_dir / "params_full.bin").exists()
        cgm, smbg = tmp_path / "cgm.csv", tmp_path / "smbg.csv"
        main(["generate", "--patients", "2", "--out", str(cgm), "--smbg-out", str(smbg)])
        capsys.readouterr()
        assert main(["eval", "--params", str(run_dir / "params_full.bin"), "--cgm", str(cgm), "--smbg", str(smbg)]) == 0
        assert "eval:full" in capsys.readouterr().out
        assert main(["report", str(run_dir)]) == 0
        assert capsys.readouterr().out.startswith("tag,n,overall_tr_rmse")

    def test_errors_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("patient_id,day,slot,glucose_mgdl\np,0,0,abc\n")
        assert main(["metrics", "--cgm", str(bad)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_unknown_config_key_exit_2(self, capsys):
        assert main(["run", "--set", "model.depth=3"]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_report_missing(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 1
