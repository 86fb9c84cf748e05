import csv
import math

import numpy as np
import pytest

from pcjscc import channel as ch
from pcjscc.geometry import PointCloud
from pcjscc.model import Transceiver, save_checkpoint
from pcjscc.pcio import write_point_cloud
from pcjscc.pipeline import (Dataset, DatasetError, DatasetSpec, SweepEntry, SweepResult,
                             aggregate_rows, emit_report, load_dataset, run_sweep,
                             verify_aggregates)
from pcjscc.training import small_config

SNRS = [0.0, 5.0, 10.0, 15.0, 20.0]


def small_spec(**kw):
    base = dict(num_points=32, recipe={"sphere": 3, "box": 3, "torus": 2}, test_fraction=0.25)
    base.update(kw)
    return DatasetSpec(**base)


@pytest.fixture(scope="module")
def data():
    return load_dataset(small_spec())


def net(n=8, seed=0, **kw):
    return Transceiver(small_config(bandwidth_n=n, pool_init="orthonormal", **kw), seed=seed)


class TestLoadDataset:
    def test_synthetic_shapes_and_range(self, data):
        assert data.train.shape == (6, 32, 3) and data.test.shape == (2, 32, 3)
        for cloud in np.concatenate([data.train, data.test]):
            assert cloud.min() >= -1 and cloud.max() <= 1
            assert np.all(cloud.min(0) == -1) and np.all(cloud.max(0) == 1)
        assert len(set(data.train_names) | set(data.test_names)) == 8

    def test_deterministic(self, data):
        again = load_dataset(small_spec())
        assert np.array_equal(again.train, data.train) and again.test_names == data.test_names

    def test_split_seed_changes_split(self, data):
        other = load_dataset(small_spec(split_seed=7))
        assert sorted(other.train_names + other.test_names) == sorted(data.train_names + data.test_names)

    def test_directory_downsamples(self, tmp_path):
        rng = np.random.default_rng(0)
        write_point_cloud(tmp_path / "big.xyz", PointCloud(rng.normal(size=(5000, 3))))
        write_point_cloud(tmp_path / "other.ply", PointCloud(rng.normal(size=(3000, 3))))
        ds = load_dataset(DatasetSpec(source="directory", path=str(tmp_path), num_points=2048))
        assert ds.train.shape[1:] == (2048, 3) and ds.test.shape[1:] == (2048, 3)

    def test_directory_keeps_explicit_split(self, tmp_path):
        rng = np.random.default_rng(1)
        for sub, count in (("train", 3), ("test", 2)):
            (tmp_path / sub).mkdir()
            for i in range(count):
                write_point_cloud(tmp_path / sub / f"{i}.xyz", PointCloud(rng.normal(size=(40, 3))))
        ds = load_dataset(DatasetSpec(source="directory", path=str(tmp_path), num_points=32))
        assert len(ds.train) == 3 and len(ds.test) == 2
        assert ds.test_names == ["0.xyz", "1.xyz"]

    def test_too_small_names_file(self, tmp_path):
        write_point_cloud(tmp_path / "tiny.xyz", PointCloud(np.random.rand(100, 3)))
        with pytest.raises(DatasetError, match="tiny.xyz"):
            load_dataset(DatasetSpec(source="directory", path=str(tmp_path), num_points=2048))

    def test_malformed_names_file(self, tmp_path):
        (tmp_path / "broken.xyz").write_text("0 0 0\n1 1\n")
        with pytest.raises(DatasetError, match="broken.xyz"):
            load_dataset(DatasetSpec(source="directory", path=str(tmp_path), num_points=1))

    def test_unreadable_source(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(DatasetSpec(source="directory", path=str(tmp_path / "missing")))
        with pytest.raises(DatasetError):
            DatasetSpec(source="ftp")

    def test_save_load(self, tmp_path, data):
        data.save(tmp_path / "d.npz")
        back = Dataset.load(tmp_path / "d.npz")
        assert np.array_equal(back.test, data.test) and back.train_names == data.train_names


class TestSweep:
    def test_five_rows_per_checkpoint(self, data):
        res = run_sweep([SweepEntry("ours", 8, net())], SNRS, data.test)
        agg = res.aggregate()
        assert [r["snr_db"] for r in agg] == SNRS
        assert all(r["count"] == len(data.test) for r in agg)
        assert len(res.rows) == 5 * len(data.test)

    def test_noiseless_independent_of_seed(self, data):
        model = net()
        a = run_sweep([SweepEntry("ours", 8, model)], [ch.NOISELESS], data.test, seed=1)
        b = run_sweep([SweepEntry("ours", 8, model)], [ch.NOISELESS], data.test, seed=2)
        assert [r["cd"] for r in a.rows] == [r["cd"] for r in b.rows]
        noisy = run_sweep([SweepEntry("ours", 8, model)], [0.0], data.test, seed=1)
        assert [r["cd"] for r in noisy.rows] != [r["cd"] for r in a.rows]

    def test_identical_csv_bytes(self, tmp_path, data):
        model = net()
        for sub in ("a", "b"):
            (tmp_path / sub).mkdir()
            run_sweep([SweepEntry("ours", 8, model)], SNRS, data.test, seed=3).write_csv(tmp_path / sub)
        for name in ("per_sample.csv", "aggregate.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_checkpoint_path_entry(self, tmp_path, data):
        model = net()
        save_checkpoint(tmp_path / "m.npz", model)
        a = run_sweep([SweepEntry("ours", 8, tmp_path / "m.npz")], [10.0], data.test)
        b = run_sweep([SweepEntry("ours", 8, model)], [10.0], data.test)
        assert a.rows == b.rows

    def test_bandwidth_mismatch_before_evaluation(self, data, monkeypatch):
        import pcjscc.pipeline as pl
        calls = []
        monkeypatch.setattr(pl, "evaluate", lambda *a, **k: calls.append(1))
        with pytest.raises(ValueError, match="bandwidth"):
            run_sweep([SweepEntry("ours", 8, net()), SweepEntry("ours", 16, net(8))],
                      SNRS, data.test)
        assert not calls

    def test_restricted_snrs(self, data):
        res = run_sweep([SweepEntry("ours", 8, net(), snrs=[5.0])], SNRS, data.test)
        assert {r["snr_db"] for r in res.rows} == {5.0}
        assert list(res.pools) == ["ours-8@5"]

    def test_aggregate_hand_values(self):
        rows = [dict(label="x-1", variant="x", bandwidth=1, snr_db=0.0, d1_ab=v, d1_ba=0.0,
                     d2_ab=0.0, d2_ba=0.0, psnr_d1=1.0, psnr_d2=1.0, cd=v, ortho_metric="")
                for v in (1.0, 2.0, 6.0)]
        (agg,) = aggregate_rows(rows)
        assert agg["mean_cd"] == 3.0 and agg["median_cd"] == 2.0 and agg["mean_ortho_metric"] == ""


@pytest.fixture(scope="module")
def result(data):
    entries = [SweepEntry(v, n, net(n, seed=s, folding=(v == "ours"), dim=n))
               for s, (v, n) in enumerate([("ours", 8), ("ours", 16), ("nofold", 8),
                                           ("nofold", 16)])]
    return run_sweep(entries, [0.0, 10.0, 20.0], data.test)


class TestVerifyAndReport:
    def test_verifier_accepts_and_catches_tampering(self, tmp_path, result):
        result.write_csv(tmp_path)
        assert verify_aggregates(tmp_path) == []
        lines = (tmp_path / "aggregate.csv").read_text().splitlines()
        head = lines[0].split(",")
        cells = lines[1].split(",")
        col = head.index("mean_cd")
        cells[col] = repr(float(cells[col]) * 1.01)
        lines[1] = ",".join(cells)
        (tmp_path / "aggregate.csv").write_text("\n".join(lines) + "\n")
        problems = verify_aggregates(tmp_path)
        assert len(problems) == 1 and "mean_cd" in problems[0]

    def test_load_round_trip(self, tmp_path, result):
        result.write_csv(tmp_path)
        back = SweepResult.load(tmp_path)
        assert back.aggregate() == result.aggregate()
        assert set(back.pools) == set(result.pools)

    def test_four_lines_per_panel(self, tmp_path, result, monkeypatch):
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        counts = {}
        real_savefig = plt.Figure.savefig

        def spy(fig, path, *a, **k):
            counts[str(path)] = [len(ax.lines) for ax in fig.axes]
            return real_savefig(fig, path, *a, **k)

        monkeypatch.setattr(plt.Figure, "savefig", spy)
        written = emit_report(result, tmp_path)
        for key in ("psnr_d1", "psnr_d2", "cd", "ortho_metric"):
            path = tmp_path / f"{key}_vs_snr.png"
            assert path in written and path.stat().st_size > 0
            assert counts[str(path)][0] == 4
        grams = sorted(p.name for p in tmp_path.glob("gram_*.png"))
        assert grams == ["gram_nofold-16.png", "gram_nofold-8.png", "gram_ours-16.png",
                         "gram_ours-8.png"]

    def test_legend_labels(self, result):
        assert result.labels() == ["ours-8", "ours-16", "nofold-8", "nofold-16"]

    def test_empty_result_writes_nothing(self, tmp_path):
        out = tmp_path / "report"
        with pytest.raises(ValueError):
            emit_report(SweepResult([], {}), out)
        assert not out.exists()

    def test_unwritable_directory(self, tmp_path, result):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            emit_report(result, blocker / "sub")

    def test_median_statistic(self, tmp_path, result):
        emit_report(result, tmp_path, stat="median")
        with open(tmp_path / "aggregate.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12 and all(math.isfinite(float(r["median_cd"])) for r in rows)
