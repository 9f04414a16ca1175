"""Command-line interface: ``glyco <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from glyco.agp import compute_tr_hard
from glyco.config import load_config, output_root
from glyco.data import (
    CSV_HEADER,
    SyntheticProfile,
    Triple,
    behavioral_sample,
    generate_corpus,
    ingest_cgm_csv,
    ingest_smbg_csv,
    write_cgm_csv,
)
from glyco.domain import SmbgSample
from glyco.dpanet import DpaNet
from glyco.errors import GlycoError
from glyco.evaluation import baseline_no_interp, evaluate
from glyco.experiment import (
    obtain_selector,
    run_experiment,
    selector_config,
    selector_pairs,
)
from glyco.sampling import SamplingPlan, apply_plan
from glyco.selector import TrainedSelector, train_selector
from glyco.training import to_arrays

log = logging.getLogger("glyco")


def write_smbg_csv(path, samples: list[SmbgSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in samples:
            for d, t in zip(*np.nonzero(s.observed)):
                w.writerow([s.patient_id, s.window_start + int(d), int(t), f"{s.m_s[d, t]:.6f}"])


def _print_tr(label: str, tr) -> None:
    print(f"{label}\ttar={tr.tar:.4f}\ttir={tr.tir:.4f}\ttbr={tr.tbr:.4f}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_generate(args) -> int:
    grids = generate_corpus(SyntheticProfile(), args.patients, args.windows, args.seed)
    write_cgm_csv(args.out, grids)
    if args.smbg_out:
        write_smbg_csv(args.smbg_out, [behavioral_sample(g, args.k, seed=i) for i, g in enumerate(grids)])
    print(f"wrote {len(grids)} windows to {args.out}")
    return 0


def cmd_metrics(args) -> int:
    grids, summary = ingest_cgm_csv(args.cgm)
    for g in grids:
        _print_tr(f"{g.patient_id}@{g.window_start}", compute_tr_hard(g))
    for r in summary["windows_rejected"]:
        print(f"rejected\t{r['patient_id']}@{r['window_start']}\t{r['reason']}", file=sys.stderr)
    return 0


def cmd_select(args) -> int:
    grids, _ = ingest_cgm_csv(args.cgm)
    if args.action == "train":
        cfg = load_config(args.config, args.set)
        if args.smbg:
            real, summary = ingest_smbg_csv(args.smbg, grids)
            pairs = selector_pairs(real, {(g.patient_id, g.window_start): g for g in grids})
            sel = train_selector(pairs, selector_config(cfg), epochs=cfg["selector.epochs"], seed=cfg["selector.seed"],
                                 lr=cfg["selector.lr"], batch_size=32)
        else:
            sel = obtain_selector(cfg, grids, None)
        sel.save(args.out)
        print(f"selector trained: final bce {sel.loss_trace[-1]:.4f}; saved to {args.out}")
        return 0
    sel = TrainedSelector.load(args.params)
    plan = SamplingPlan("active", k_per_day=args.k, delta=args.delta)
    samples = [apply_plan(g, plan, sel) for g in grids]
    write_smbg_csv(args.out, samples)
    print(f"selected {sum(s.n_observed for s in samples)} points over {len(samples)} windows -> {args.out}")
    return 0


def cmd_sample(args) -> int:
    grids, _ = ingest_cgm_csv(args.cgm)
    sel = TrainedSelector.load(args.selector) if args.selector else None
    samples = []
    for i, g in enumerate(grids):
        plan = SamplingPlan(args.strategy, rate=args.rate, gamma_h=args.gamma, k_per_day=args.k,
                            delta=args.delta, seed=args.seed + i)
        samples.append(apply_plan(g, plan, sel))
    write_smbg_csv(args.out, samples)
    print(f"wrote {sum(s.n_observed for s in samples)} SMBG rows to {args.out}")
    return 0


def _paired_triples(args):
    grids, _ = ingest_cgm_csv(args.cgm)
    samples, summary = ingest_smbg_csv(args.smbg, grids)
    by_key = {(g.patient_id, g.window_start): g for g in grids}
    paired = [by_key[(s.patient_id, s.window_start)] for s in samples]
    if summary["orphan_rows"]:
        print(f"warning: {len(summary['orphan_rows'])} SMBG rows had no CGM window", file=sys.stderr)
    return paired, samples


def cmd_eval(args) -> int:
    grids, samples = _paired_triples(args)
    net = DpaNet.load(args.params)
    triples = [Triple(f"s{i:05d}", "", s.origin, s, g, compute_tr_hard(g)) for i, (g, s) in enumerate(zip(grids, samples))]
    data = to_arrays(triples)
    rep = evaluate(net.predict(data.x, args.mode), data.tr)
    print(rep.to_text(f"eval:{args.mode}"), end="")
    return 0


def cmd_baseline(args) -> int:
    grids, samples = _paired_triples(args)
    rep = evaluate([baseline_no_interp(s) for s in samples], [compute_tr_hard(g) for g in grids])
    print(rep.to_text("baseline"), end="")
    return 0


def cmd_report(args) -> int:
    root = Path(args.dir)
    files = sorted(root.glob("report_*.txt"))
    if not files:
        print(f"no reports under {root}", file=sys.stderr)
        return 1
    summary = root / "summary.csv"
    if summary.exists():
        print(summary.read_text(), end="")
    if args.full:
        for f in files:
            print(f.read_text(), end="")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.kind:
        cfg["experiment.kind"] = args.kind
    reports = run_experiment(cfg)
    for tag, rep in reports.items():
        print(f"{tag}\toverall_tr_rmse={rep.overall_rmse:.4f}")
    print(f"artifacts in {output_root(cfg) / cfg['experiment.name']}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glyco", description="Time-in-range estimation from sparse glucose readings.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic CGM corpus as CSV")
    g.add_argument("--patients", type=int, default=10)
    g.add_argument("--windows", type=int, default=1, help="14-day windows per patient")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--smbg-out", help="also write behaviourally simulated SMBG readings")
    g.add_argument("--k", type=int, default=5, help="SMBG readings per day for --smbg-out")
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("metrics", help="TAR/TIR/TBR of every window in a CGM CSV")
    m.add_argument("--cgm", required=True)
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("select", help="train or apply the active point selector")
    s.add_argument("action", choices=("train", "apply"))
    s.add_argument("--cgm", required=True)
    s.add_argument("--smbg", help="paired SMBG CSV for training (simulated when omitted)")
    s.add_argument("--params", help="selector parameter file for apply")
    s.add_argument("--config")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--delta", type=int, default=12)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select)

    sa = sub.add_parser("sample", help="apply a sampling plan to a CGM CSV")
    sa.add_argument("--cgm", required=True)
    sa.add_argument("--strategy", choices=("random", "hybrid", "active"), default="random")
    sa.add_argument("--rate", type=float, default=0.028)
    sa.add_argument("--gamma", type=float, default=0.0)
    sa.add_argument("--k", type=int, default=5)
    sa.add_argument("--delta", type=int, default=12)
    sa.add_argument("--selector")
    sa.add_argument("--seed", type=int, default=0)
    sa.add_argument("--out", required=True)
    sa.set_defaults(func=cmd_sample)

    for name, kind, text in (("train", "single", "train one model from a config"), ("run", None, "run a configured experiment")):
        r = sub.add_parser(name, help=text)
        r.add_argument("--config")
        r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        r.set_defaults(func=cmd_run, kind=kind)

    e = sub.add_parser("eval", help="evaluate a trained model on paired CGM/SMBG CSVs")
    e.add_argument("--params", required=True)
    e.add_argument("--cgm", required=True)
    e.add_argument("--smbg", required=True)
    e.add_argument("--mode", choices=("full", "lower-only", "upper-only"), default="full")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="No-Interp baseline on paired CGM/SMBG CSVs")
    b.add_argument("--cgm", required=True)
    b.add_argument("--smbg", required=True)
    b.set_defaults(func=cmd_baseline)

    rp = sub.add_parser("report", help="print the summary of an experiment directory")
    rp.add_argument("dir")
    rp.add_argument("--full", action="store_true", help="also print every report file")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except GlycoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
