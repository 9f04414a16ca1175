import numpy as np
import pytest

from glyco.agp import compute_tr_hard
from glyco.data import (
    SyntheticProfile,
    behavioral_sample,
    build_dataset,
    fill_gaps,
    generate_corpus,
    generate_synthetic_grid,
    ingest_cgm_csv,
    ingest_smbg_csv,
    split_patients,
    write_cgm_csv,
)
from glyco.domain import CgmGrid
from glyco.errors import SplitError, ValidationError
from glyco.sampling import SamplingPlan

HEADER = "patient_id,day,slot,glucose_mgdl\n"


def cgm_rows(pid, values, day0=0, skip=()):
    lines = []
    for d in range(values.shape[0]):
        for s in range(values.shape[1]):
            if (d, s) not in skip:
                lines.append(f"{pid},{day0 + d},{s},{values[d, s]}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def full_window():
    return np.random.default_rng(0).integers(60, 300, size=(14, 288)).astype(float)


@pytest.fixture(scope="module")
def grids():
    return generate_corpus(SyntheticProfile(), 10, seed=0)


class TestGenerator:
    def test_constant_profile(self):
        g = generate_synthetic_grid(SyntheticProfile.flat(110.0), seed=4)
        assert np.all(g.values == 110.0)
        assert compute_tr_hard(g).as_array().tolist() == [0.0, 1.0, 0.0]

    def test_high_profile(self):
        g = generate_synthetic_grid(SyntheticProfile.flat(250.0), seed=1)
        assert compute_tr_hard(g).as_array().tolist() == [1.0, 0.0, 0.0]

    def test_deterministic(self):
        a = generate_synthetic_grid(SyntheticProfile(), seed=7)
        b = generate_synthetic_grid(SyntheticProfile(), seed=7)
        np.testing.assert_array_equal(a.values, b.values)

    @pytest.mark.parametrize("seed", range(20))
    def test_clamped(self, seed):
        v = generate_synthetic_grid(SyntheticProfile(excursion_mean=200, hypo_rate=3), seed=seed).values
        assert v.shape == (14, 288) and v.min() >= 40 and v.max() <= 400

    def test_tir_spread(self):
        tir = [compute_tr_hard(generate_synthetic_grid(SyntheticProfile(), seed=s)).tir for s in range(100)]
        assert min(tir) <= 0.4 and max(tir) >= 0.95

    def test_corpus_windows(self):
        grids = generate_corpus(SyntheticProfile(), 3, windows_per_patient=2, seed=0)
        assert [g.patient_id for g in grids] == ["syn0000", "syn0000", "syn0001", "syn0001", "syn0002", "syn0002"]
        assert [g.window_start for g in grids[:2]] == [0, 14]
        assert not np.array_equal(grids[0].values, grids[1].values)


class TestBehavioral:
    def test_counts_and_spacing(self):
        g = generate_synthetic_grid(SyntheticProfile(), seed=2)
        s = behavioral_sample(g, 5, seed=0)
        assert s.origin == "behavioral"
        for day in s.observed:
            idx = np.flatnonzero(day)
            assert len(idx) == 5 and np.all(np.diff(idx) >= 12)

    def test_values_from_grid(self):
        g = generate_synthetic_grid(SyntheticProfile(), seed=2)
        s = behavioral_sample(g, 5, seed=0)
        np.testing.assert_array_equal(s.m_s[s.observed], g.values[s.observed])


class TestGapFill:
    def test_two_slot_gap(self):
        out, _ = fill_gaps(np.array([100.0, np.nan, np.nan, 130.0]))
        np.testing.assert_allclose(out, [100, 110, 120, 130])

    def test_edge_gap(self):
        out, _ = fill_gaps(np.array([np.nan, 90.0, 95.0, np.nan]))
        np.testing.assert_allclose(out, [90, 90, 95, 95])

    def test_long_gap(self):
        out, why = fill_gaps(np.array([1.0, np.nan, np.nan, np.nan, np.nan, 2.0]))
        assert out is None and "4" in why


class TestCgmCsv:
    def test_complete_window_verbatim(self, tmp_path, full_window):
        p = tmp_path / "cgm.csv"
        p.write_text(HEADER + cgm_rows("a", full_window))
        grids, summary = ingest_cgm_csv(p)
        assert len(grids) == 1 and summary["windows_accepted"] == 1
        np.testing.assert_array_equal(grids[0].values, full_window)

    def test_six_percent_missing_rejected(self, tmp_path, full_window):
        n = int(np.ceil(0.06 * 14 * 288))
        skip = {(i // 288, i % 288) for i in range(0, 4 * n, 4)}
        p = tmp_path / "cgm.csv"
        p.write_text(HEADER + cgm_rows("a", full_window, skip=skip))
        grids, summary = ingest_cgm_csv(p)
        assert grids == [] and len(summary["windows_rejected"]) == 1
        assert "missing" in summary["windows_rejected"][0]["reason"]

    def test_interpolation(self, tmp_path, full_window):
        full_window[3, 10], full_window[3, 13] = 100.0, 130.0
        p = tmp_path / "cgm.csv"
        p.write_text(HEADER + cgm_rows("a", full_window, skip={(3, 11), (3, 12)}))
        grids, summary = ingest_cgm_csv(p)
        np.testing.assert_allclose(grids[0].values[3, 10:14], [100, 110, 120, 130])
        assert summary["interpolated_slots"] == 2

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "cgm.csv"
        p.write_text(HEADER + "a,0,0,100\na,0,x,100\n")
        with pytest.raises(ValidationError, match="line 3"):
            ingest_cgm_csv(p)

    def test_out_of_range(self, tmp_path):
        p = tmp_path / "cgm.csv"
        p.write_text(HEADER + "a,0,0,900\n")
        with pytest.raises(ValidationError, match="outside"):
            ingest_cgm_csv(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "cgm.csv"
        p.write_text("pid,day,slot,value\n")
        with pytest.raises(ValidationError, match="header"):
            ingest_cgm_csv(p)

    def test_roundtrip_writer(self, tmp_path):
        grids = generate_corpus(SyntheticProfile(), 2, 2, seed=3)
        p = tmp_path / "c.csv"
        write_cgm_csv(p, grids)
        back, _ = ingest_cgm_csv(p)
        assert [(g.patient_id, g.window_start) for g in back] == [(g.patient_id, g.window_start) for g in grids]
        for a, b in zip(back, grids):
            np.testing.assert_allclose(a.values, b.values, atol=1e-6)


class TestSmbgCsv:
    @pytest.fixture
    def grid(self, full_window):
        return CgmGrid(full_window, patient_id="a", window_start=0)

    def test_empty(self, tmp_path, grid):
        p = tmp_path / "s.csv"
        p.write_text(HEADER)
        assert ingest_smbg_csv(p, [grid])[0] == []
        p.write_text("")
        assert ingest_smbg_csv(p, [grid])[0] == []

    def test_five_rows_one_day(self, tmp_path, grid):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "".join(f"a,2,{s},{100 + s}\n" for s in (10, 60, 120, 200, 250)))
        samples, _ = ingest_smbg_csv(p, [grid])
        (s,) = samples
        assert s.origin == "real"
        assert s.observed[2].sum() == 5 and s.n_observed == 5
        assert s.m_s[2, 60] == 160

    def test_duplicates_last_wins(self, tmp_path, grid):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "a,1,5,100\na,1,5,140\n")
        samples, summary = ingest_smbg_csv(p, [grid])
        assert samples[0].m_s[1, 5] == 140 and summary["duplicate_rows"] == 1

    def test_orphans(self, tmp_path, grid):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "b,1,5,100\na,20,5,100\na,0,0,90\n")
        samples, summary = ingest_smbg_csv(p, [grid])
        assert len(samples) == 1
        assert [o["line"] for o in summary["orphan_rows"]] == [2, 3]


class TestBuildDataset:
    def test_split_sizes(self, grids):
        ds = build_dataset(grids, SamplingPlan("random"), seed=1)
        assert [len(ds.splits[k]) for k in ("train", "val", "test")] == [7, 1, 2]

    @pytest.mark.parametrize("n", [3, 4, 7, 20, 33])
    def test_split_disjoint_and_complete(self, n):
        split = split_patients([f"p{i}" for i in range(n)], seed=n)
        sets = [set(v) for v in split.values()]
        assert sum(map(len, sets)) == n and len(set().union(*sets)) == n
        assert all(sets)

    def test_too_few_patients(self):
        with pytest.raises(SplitError):
            split_patients(["a", "b", "b"])

    def test_patients_do_not_straddle(self):
        grids = generate_corpus(SyntheticProfile(), 6, windows_per_patient=3, seed=2)
        ds = build_dataset(grids, SamplingPlan("random"), seed=0)
        owners = {}
        for name in ds.splits:
            for t in ds.subset(name):
                owners.setdefault(t.grid.patient_id, set()).add(name)
        assert all(len(v) == 1 for v in owners.values())

    def test_labels_rederivable(self, grids):
        ds = build_dataset(grids, SamplingPlan("random"), seed=1)
        for t in ds.triples:
            assert t.label == compute_tr_hard(t.grid)

    def test_manifest_format(self, grids):
        line = build_dataset(grids, SamplingPlan("random"), seed=1).manifest_lines()[0]
        fields = line.split("|")
        assert len(fields) == 6 and all(len(f.split(".")[1]) == 6 for f in fields[3:])

    def test_hash_determinism(self, grids):
        a = build_dataset(grids, SamplingPlan("random", seed=4), seed=1)
        b = build_dataset(grids, SamplingPlan("random", seed=4), seed=1)
        c = build_dataset(grids, SamplingPlan("random", seed=4), seed=2)
        assert a.manifest_hash() == b.manifest_hash() != c.manifest_hash()
