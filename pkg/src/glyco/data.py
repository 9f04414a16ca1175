"""Synthetic CGM generation, CSV ingestion and dataset assembly."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from glyco.agp import TrVector, compute_tr_hard
from glyco.domain import DAYS, MAX_GLUCOSE, SLOTS_PER_DAY, CgmGrid, SmbgSample
from glyco.errors import ParameterError, SplitError, ValidationError
from glyco.sampling import SamplingPlan, Selector, apply_plan

CSV_HEADER = ["patient_id", "day", "slot", "glucose_mgdl"]
CLAMP = (40.0, 400.0)
MAX_MISSING_FRACTION = 0.05
MAX_GAP = 3


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticProfile:
    """Population-level parameters; each seed draws one patient from it.

    ``baseline_spread`` and ``amplitude_spread`` control between-patient
    variability (set both to 0 for a fully deterministic shape).
    """

    baseline: float = 135.0
    baseline_spread: float = 30.0
    meal_slots: tuple = (90, 150, 222)
    meal_jitter: float = 8.0
    excursion_mean: float = 75.0
    excursion_sd: float = 25.0
    amplitude_spread: float = 0.45
    rise_slots: float = 2.5
    decay_slots: float = 22.0
    hypo_rate: float = 0.35
    hypo_depth: float = 55.0
    noise_sd: float = 6.0
    circadian_amplitude: float = 15.0

    def __post_init__(self):
        if self.baseline <= 0:
            raise ParameterError("baseline must be positive")
        for name in ("baseline_spread", "meal_jitter", "excursion_sd", "amplitude_spread", "hypo_rate", "noise_sd"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if self.rise_slots <= 0 or self.decay_slots <= 0:
            raise ParameterError("rise_slots and decay_slots must be positive")
        if any(not 0 <= s < SLOTS_PER_DAY for s in self.meal_slots):
            raise ParameterError("meal slots must lie within a day")

    @classmethod
    def flat(cls, level: float) -> "SyntheticProfile":
        """Noise-free constant profile."""
        return cls(
            baseline=level, baseline_spread=0.0, meal_slots=(), excursion_mean=0.0, excursion_sd=0.0,
            amplitude_spread=0.0, hypo_rate=0.0, noise_sd=0.0, circadian_amplitude=0.0,
        )


def _patient_traits(profile: SyntheticProfile, rng: np.random.Generator) -> dict:
    return {
        "baseline": profile.baseline + profile.baseline_spread * rng.standard_normal(),
        "amp_scale": math.exp(profile.amplitude_spread * rng.standard_normal()) if profile.amplitude_spread else 1.0,
        "phase": rng.uniform(0, 2 * np.pi),
        "hypo_scale": rng.uniform(0.3, 1.7) if profile.hypo_rate else 0.0,
    }


def excursion_curve(t: np.ndarray, onset: float, amplitude: float, rise: float, decay: float) -> np.ndarray:
    """Logistic rise starting at ``onset`` followed by exponential decay."""
    rel = t - onset
    up = 1.0 / (1.0 + np.exp(np.clip(-(rel - 3.0 * rise) / rise, -50.0, 50.0)))
    down = np.exp(-np.maximum(rel - 6.0 * rise, 0.0) / decay)
    return amplitude * up * down * (rel > -3.0 * rise)


def generate_synthetic_grid(
    profile: SyntheticProfile = SyntheticProfile(),
    seed: int = 0,
    window: int = 0,
    patient_id: str | None = None,
    days: int = DAYS,
    slots: int = SLOTS_PER_DAY,
) -> CgmGrid:
    """One 14-day window; patient traits depend on ``seed`` only, day events on (seed, window)."""
    traits = _patient_traits(profile, np.random.default_rng(seed))
    rng = np.random.default_rng((seed, window + 1))
    n = days * slots
    t = np.arange(n, dtype=np.float64)
    g = np.full(n, traits["baseline"])
    g += profile.circadian_amplitude * np.sin(2 * np.pi * t / slots + traits["phase"])
    scale = slots / SLOTS_PER_DAY
    for d in range(days):
        for m in profile.meal_slots:
            onset = d * slots + m * scale + profile.meal_jitter * scale * rng.standard_normal()
            amp = max(0.0, profile.excursion_mean + profile.excursion_sd * rng.standard_normal()) * traits["amp_scale"]
            if amp > 0:
                g += excursion_curve(t, onset, amp, profile.rise_slots * scale, profile.decay_slots * scale)
        n_hypo = rng.poisson(profile.hypo_rate * traits["hypo_scale"]) if profile.hypo_rate else 0
        for _ in range(n_hypo):
            centre = d * slots + rng.uniform(0, slots)
            depth = profile.hypo_depth * rng.uniform(0.6, 1.4)
            g -= depth * np.exp(-0.5 * ((t - centre) / (6.0 * scale)) ** 2)
    if profile.noise_sd:
        g += profile.noise_sd * rng.standard_normal(n)
    g = np.clip(g, *CLAMP)
    pid = patient_id if patient_id is not None else f"syn{seed}"
    return CgmGrid(g.reshape(days, slots), patient_id=pid, window_start=window * days)


def generate_corpus(
    profile: SyntheticProfile, n_patients: int, windows_per_patient: int = 1, seed: int = 0
) -> list[CgmGrid]:
    """Synthetic patients ``syn0000 ...``; each patient seed is derived from (seed, index)."""
    if n_patients < 1 or windows_per_patient < 1:
        raise ParameterError("need at least one patient and one window")
    grids = []
    for p in range(n_patients):
        pseed = int(np.random.SeedSequence((seed, p)).generate_state(1)[0])
        for w in range(windows_per_patient):
            grids.append(generate_synthetic_grid(profile, pseed, window=w, patient_id=f"syn{p:04d}"))
    return grids


# --------------------------------------------------------------------------
# behavioural SMBG simulation (stand-in for real paired data)
# --------------------------------------------------------------------------

WAKE_SLOT, SLEEP_SLOT = 78, 270  # 06:30 and 22:30


def behavioral_weights(day_mgdl: np.ndarray, meal_slots=SyntheticProfile().meal_slots) -> np.ndarray:
    """Relative propensity to take a fingerstick at each slot of one day.

    People test on waking, before meals, at bedtime and when they feel low.
    """
    T = day_mgdl.shape[0]
    s = SLOTS_PER_DAY / T
    t = np.arange(T) * s
    w = np.where((t >= WAKE_SLOT) & (t <= SLEEP_SLOT), 0.01, 0.001)
    for centre, height in [(WAKE_SLOT + 6, 1.0), *((m - 6, 1.0) for m in meal_slots), (SLEEP_SLOT - 6, 0.5)]:
        w = w + height * np.exp(-0.5 * ((t - centre) / 3.0) ** 2)
    w = w + 0.3 * (np.asarray(day_mgdl) < 75)
    return w / w.sum()


def behavioral_sample(grid: CgmGrid, k_per_day: int = 5, seed: int = 0, min_gap: int = 12) -> SmbgSample:
    """Draw ``k_per_day`` behaviourally plausible readings per day, at least ``min_gap`` slots apart."""
    rng = np.random.default_rng((seed, 0xB5))
    observed = np.zeros(grid.values.shape, dtype=bool)
    T = grid.slots
    for d in range(grid.days):
        w = behavioral_weights(grid.values[d]).copy()
        for _ in range(k_per_day):
            if w.sum() <= 0:
                break
            slot = int(rng.choice(T, p=w / w.sum()))
            observed[d, slot] = True
            w[max(0, slot - min_gap + 1) : slot + min_gap] = 0.0
    return SmbgSample.from_observations(
        grid.values, observed, origin="behavioral", patient_id=grid.patient_id, window_start=grid.window_start
    )


def fixed_anchor_days(
    n_days: int, anchors=(84, 144, 228), seed: int = 0, profile: SyntheticProfile = SyntheticProfile()
) -> tuple[np.ndarray, list[list[int]]]:
    """Synthetic days whose SMBG readings always fall on the same anchor slots."""
    rows = []
    i = 0
    while len(rows) < n_days:
        g = generate_synthetic_grid(profile, seed=int(np.random.SeedSequence((seed, i)).generate_state(1)[0]))
        rows.extend(g.values)
        i += 1
    days = np.array(rows[:n_days])
    return days, [list(anchors) for _ in range(n_days)]


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def _read_rows(path):
    """Yield (line_no, patient, day, slot, value) from a validated CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        if [h.strip() for h in header] != CSV_HEADER:
            raise ValidationError(f"{path}: line 1: header must be {','.join(CSV_HEADER)}, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ValidationError(f"{path}: line {line}: expected 4 fields, got {len(row)}")
            try:
                pid = row[0].strip()
                day, slot, value = int(row[1]), int(row[2]), float(row[3])
            except ValueError as exc:
                raise ValidationError(f"{path}: line {line}: malformed row {row!r} ({exc})") from None
            if not pid:
                raise ValidationError(f"{path}: line {line}: empty patient_id")
            if day < 0 or not 0 <= slot < SLOTS_PER_DAY:
                raise ValidationError(f"{path}: line {line}: day {day} / slot {slot} out of range")
            if not math.isfinite(value) or value <= 0 or value > MAX_GLUCOSE:
                raise ValidationError(f"{path}: line {line}: glucose {value} outside (0, {MAX_GLUCOSE:g}] mg/dL")
            yield line, pid, day, slot, value


def _runs(mask: np.ndarray):
    """(start, stop) of each run of True values."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[0::2], edges[1::2]))


def fill_gaps(flat: np.ndarray, max_gap: int = MAX_GAP) -> tuple[np.ndarray | None, str]:
    """Linear interpolation of NaN runs up to ``max_gap`` long; edge runs take the nearest value."""
    out = flat.copy()
    missing = np.isnan(out)
    for a, b in _runs(missing):
        if b - a > max_gap:
            return None, f"gap of {b - a} slots exceeds {max_gap}"
        if a == 0 and b == out.size:
            return None, "no values"
        if a == 0:
            out[a:b] = out[b]
        elif b == out.size:
            out[a:b] = out[a - 1]
        else:
            lo, hi = out[a - 1], out[b]
            out[a:b] = lo + (hi - lo) * np.arange(1, b - a + 1) / (b - a + 1)
    return out, ""


def ingest_cgm_csv(path, window_days: int = DAYS) -> tuple[list[CgmGrid], dict]:
    """Group rows into non-overlapping windows per patient; returns (grids, summary)."""
    cells: dict[str, dict[tuple[int, int], float]] = {}
    duplicates = 0
    for _, pid, day, slot, value in _read_rows(path):
        bucket = cells.setdefault(pid, {})
        duplicates += (day, slot) in bucket
        bucket[(day, slot)] = value
    grids, rejected = [], []
    interpolated = 0
    for pid in sorted(cells):
        bucket = cells[pid]
        last_day = max(d for d, _ in bucket)
        for w in range(last_day // window_days + 1):
            start = w * window_days
            arr = np.full((window_days, SLOTS_PER_DAY), np.nan)
            for (d, s), v in bucket.items():
                if start <= d < start + window_days:
                    arr[d - start, s] = v
            n_missing = int(np.isnan(arr).sum())
            frac = n_missing / arr.size
            if frac > MAX_MISSING_FRACTION:
                rejected.append({"patient_id": pid, "window_start": start, "reason": f"{frac:.1%} missing"})
                continue
            filled, why = fill_gaps(arr.ravel())
            if filled is None:
                rejected.append({"patient_id": pid, "window_start": start, "reason": why})
                continue
            interpolated += n_missing
            grids.append(CgmGrid(filled.reshape(arr.shape), patient_id=pid, window_start=start))
    summary = {
        "windows_accepted": len(grids),
        "windows_rejected": rejected,
        "interpolated_slots": interpolated,
        "duplicate_rows": duplicates,
    }
    return grids, summary


def ingest_smbg_csv(path, grids: list[CgmGrid]) -> tuple[list[SmbgSample], dict]:
    """Align SMBG rows to CGM windows by patient and day range; returns (samples, summary)."""
    windows = {(g.patient_id, g.window_start): g for g in grids}
    obs: dict[tuple[str, int], dict[tuple[int, int], float]] = {}
    duplicates, orphans = 0, []
    for line, pid, day, slot, value in _read_rows(path):
        key = next(
            ((p, ws) for (p, ws), g in windows.items() if p == pid and ws <= day < ws + g.days),
            None,
        )
        if key is None:
            orphans.append({"line": line, "patient_id": pid, "day": day, "slot": slot})
            continue
        bucket = obs.setdefault(key, {})
        duplicates += (day, slot) in bucket
        bucket[(day, slot)] = value
    samples = []
    for key in sorted(obs):
        g = windows[key]
        m_s = np.zeros(g.values.shape)
        for (d, s), v in obs[key].items():
            m_s[d - key[1], s] = v
        samples.append(
            SmbgSample(m_s=m_s, m_m=(m_s == 0).astype(float), origin="real", patient_id=key[0], window_start=key[1])
        )
    return samples, {"samples": len(samples), "duplicate_rows": duplicates, "orphan_rows": orphans}


def write_cgm_csv(path, grids: list[CgmGrid]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for g in grids:
            for d in range(g.days):
                for s in range(g.slots):
                    w.writerow([g.patient_id, g.window_start + d, s, f"{g.values[d, s]:.6f}"])


# --------------------------------------------------------------------------
# dataset assembly
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Triple:
    sample_id: str
    source: str
    plan: str
    sample: SmbgSample
    grid: CgmGrid
    label: TrVector


@dataclass
class Dataset:
    triples: list
    splits: dict = field(default_factory=dict)  # split name -> list of sample ids

    def subset(self, split: str) -> list:
        ids = set(self.splits[split])
        return [t for t in self.triples if t.sample_id in ids]

    def manifest_lines(self) -> list[str]:
        return [
            f"{t.sample_id}|{t.source}|{t.plan}|{t.label.tar:.6f}|{t.label.tir:.6f}|{t.label.tbr:.6f}"
            for t in self.triples
        ]

    def manifest_text(self) -> str:
        return "\n".join(self.manifest_lines()) + "\n"

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_text().encode()).hexdigest()

    def write_manifest(self, path) -> None:
        Path(path).write_text(self.manifest_text())

    def split_text(self) -> str:
        return "".join(f"{name}|{sid}\n" for name in ("train", "val", "test") for sid in self.splits.get(name, []))


def split_patients(patient_ids, seed: int = 0, fractions=(0.7, 0.15)) -> dict[str, list[str]]:
    """Shuffle unique patients and cut floor(70%) train, floor(15%) val, remainder test."""
    unique = sorted(set(patient_ids))
    if len(unique) < 3:
        raise SplitError(f"need at least 3 patients for a train/val/test split, got {len(unique)}")
    order = [unique[i] for i in np.random.default_rng((seed, 0x5B)).permutation(len(unique))]
    n_train = max(1, math.floor(fractions[0] * len(order)))
    n_val = max(1, math.floor(fractions[1] * len(order)))
    if n_train + n_val >= len(order):
        n_train = len(order) - n_val - 1
    return {
        "train": order[:n_train],
        "val": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }


def sample_seed(plan_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((plan_seed, index)).generate_state(1)[0])


def build_dataset(
    grids: list[CgmGrid],
    plan: SamplingPlan,
    selector: Selector | None = None,
    seed: int = 0,
    sources: list[str] | None = None,
    samples: list[SmbgSample] | None = None,
) -> Dataset:
    """Sample each grid, label it by hard counting, shuffle and split by patient.

    Pre-built ``samples`` (e.g. real SMBG) may be supplied instead of sampling.
    """
    if samples is not None and len(samples) != len(grids):
        raise ParameterError("samples and grids must have equal length")
    triples = []
    for i, g in enumerate(grids):
        if samples is not None:
            s, desc = samples[i], samples[i].origin
        else:
            s, desc = apply_plan(g, replace(plan, seed=sample_seed(plan.seed, i)), selector), plan.describe()
        src = sources[i] if sources is not None else f"{g.patient_id}@{g.window_start}"
        triples.append(Triple(f"s{i:05d}", src, desc, s, g, compute_tr_hard(g)))
    split = split_patients([g.patient_id for g in grids], seed)
    order = np.random.default_rng((seed, 0x5C)).permutation(len(triples))
    triples = [triples[i] for i in order]
    by_split = {
        name: [t.sample_id for t in triples if t.grid.patient_id in set(pids)] for name, pids in split.items()
    }
    return Dataset(triples, by_split)
