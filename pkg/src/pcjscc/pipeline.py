"""Dataset ingestion, SNR sweeps, aggregate tables and plots."""
from __future__ import annotations

import csv
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from . import channel as ch
from .geometry import PointCloud, fps_downsample, normalize_to_range
from .metrics import CSV_FIELDS, MetricsReport, evaluate
from .model import Transceiver, load_checkpoint
from .pcio import read_point_cloud
from .synthetic import default_recipe, generate_synthetic

log = logging.getLogger(__name__)

METRIC_FIELDS = ("d1_ab", "d1_ba", "d2_ab", "d2_ba", "psnr_d1", "psnr_d2", "cd", "ortho_metric")
POINT_SUFFIXES = (".xyz", ".ply", ".txt", ".pts")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSpec:
    source: str = "synthetic"             # "synthetic" or "directory"
    path: Optional[str] = None
    num_points: int = 2048
    lo: float = -1.0
    hi: float = 1.0
    recipe: dict = field(default_factory=default_recipe)
    data_seed: int = 0
    split_seed: int = 0
    test_fraction: float = 0.125
    oversample: int = 2                   # synthetic raw points per kept point

    def __post_init__(self):
        if self.source not in ("synthetic", "directory"):
            raise DatasetError(f"unknown source {self.source!r}")
        if self.source == "directory" and not self.path:
            raise DatasetError("directory source needs a path")


@dataclass
class Dataset:
    train: np.ndarray           # (K_train, M, 3)
    test: np.ndarray
    train_names: list
    test_names: list

    def save(self, path) -> None:
        np.savez_compressed(path, train=self.train, test=self.test,
                            train_names=np.array(self.train_names),
                            test_names=np.array(self.test_names))

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as data:
            return cls(data["train"], data["test"], list(data["train_names"]),
                       list(data["test_names"]))


def preprocess(cloud: PointCloud, spec: DatasetSpec, name: str = "<cloud>") -> np.ndarray:
    if len(cloud) < spec.num_points:
        raise DatasetError(f"{name}: has {len(cloud)} points, need at least {spec.num_points}")
    cloud = fps_downsample(cloud, spec.num_points, 0)
    return normalize_to_range(cloud, spec.lo, spec.hi).points


def _split(names: list, clouds: list, spec: DatasetSpec):
    perm = np.random.default_rng(spec.split_seed).permutation(len(clouds))
    n_test = max(1, int(round(spec.test_fraction * len(clouds)))) if len(clouds) > 1 else 0
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    stack = lambda idx: (np.stack([clouds[i] for i in idx]) if len(idx)
                         else np.empty((0, spec.num_points, 3)))
    return Dataset(stack(train_idx), stack(test_idx), [names[i] for i in train_idx],
                   [names[i] for i in test_idx])


def _read_dir(directory: Path, spec: DatasetSpec):
    files = sorted(p for p in directory.rglob("*") if p.suffix.lower() in POINT_SUFFIXES)
    names, clouds = [], []
    for f in files:
        try:
            cloud = read_point_cloud(f)
        except Exception as exc:          # surface the offending file
            raise DatasetError(f"{f}: {exc}") from exc
        clouds.append(preprocess(cloud, spec, str(f)))
        names.append(str(f.relative_to(directory)))
    return names, clouds


def load_dataset(spec: DatasetSpec) -> Dataset:
    """FPS-downsampled, range-normalized train/test clouds.

    A directory with ``train/`` and ``test/`` subfolders keeps that split;
    otherwise files (or synthetic instances) are split by ``split_seed``.
    """
    if spec.source == "synthetic":
        instances = generate_synthetic(spec.recipe, spec.data_seed,
                                       spec.oversample * spec.num_points)
        names = [f"{inst.family}_{i:04d}" for i, inst in enumerate(instances)]
        clouds = [preprocess(PointCloud(inst.points), spec, n)
                  for n, inst in zip(names, instances)]
        return _split(names, clouds, spec)
    root = Path(spec.path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a readable directory")
    if (root / "train").is_dir() and (root / "test").is_dir():
        tr_names, tr = _read_dir(root / "train", spec)
        te_names, te = _read_dir(root / "test", spec)
        if not tr:
            raise DatasetError(f"{root}/train: no point-cloud files")
        return Dataset(np.stack(tr), np.stack(te) if te else np.empty((0, spec.num_points, 3)),
                       tr_names, te_names)
    names, clouds = _read_dir(root, spec)
    if not clouds:
        raise DatasetError(f"{root}: no point-cloud files")
    return _split(names, clouds, spec)


# -- sweeps --------------------------------------------------------------

@dataclass
class SweepEntry:
    variant: str
    bandwidth: int
    model: Union[Transceiver, str, Path]
    snrs: Optional[Sequence[float]] = None      # restrict to these SNRs (per-SNR checkpoints)

    @property
    def label(self) -> str:
        return f"{self.variant}-{self.bandwidth}"


@dataclass
class SweepResult:
    rows: list                      # per-sample dicts: variant + CSV_FIELDS
    pools: dict                     # label -> pool matrix (one per checkpoint, keyed by snr)

    def labels(self) -> list:
        seen = []
        for r in self.rows:
            if r["label"] not in seen:
                seen.append(r["label"])
        return seen

    def aggregate(self) -> list:
        return aggregate_rows(self.rows)

    def write_csv(self, out_dir) -> None:
        out_dir = Path(out_dir)
        _write_rows(out_dir / "per_sample.csv", self.rows, ("label", "variant") + CSV_FIELDS)
        agg = self.aggregate()
        _write_rows(out_dir / "aggregate.csv", agg, tuple(agg[0].keys()))
        np.savez(out_dir / "pools.npz", **self.pools)

    @classmethod
    def load(cls, out_dir) -> "SweepResult":
        out_dir = Path(out_dir)
        rows = _read_rows(out_dir / "per_sample.csv")
        pools = {}
        if (out_dir / "pools.npz").exists():
            with np.load(out_dir / "pools.npz") as data:
                pools = {k: data[k] for k in data.files}
        return cls(rows, pools)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_rows(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(r.get(k, "")) for k in columns})


def _parse_cell(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def _read_rows(path) -> list:
    with open(path, newline="") as fh:
        return [{k: _parse_cell(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def aggregate_rows(rows) -> list:
    """Mean and median of every metric per (label, snr) cell, in first-seen order."""
    cells = {}
    for r in rows:
        cells.setdefault((r["label"], r["variant"], r["bandwidth"], float(r["snr_db"])), []).append(r)
    out = []
    for (label, variant, bw, snr), members in cells.items():
        agg = {"label": label, "variant": variant, "bandwidth": bw, "snr_db": snr,
               "count": len(members)}
        for name in METRIC_FIELDS:
            vals = [m[name] for m in members if m.get(name) not in (None, "")]
            vals = np.asarray(vals, dtype=np.float64)
            agg[f"mean_{name}"] = float(np.mean(vals)) if vals.size else ""
            agg[f"median_{name}"] = float(np.median(vals)) if vals.size else ""
        out.append(agg)
    return out


def cell_seed(seed: int, label: str, snr_db: float) -> int:
    return zlib.crc32(f"{seed}|{label}|{snr_db!r}".encode()) & 0x7FFFFFFF


def _resolve(entry: SweepEntry) -> Transceiver:
    model = entry.model
    if not isinstance(model, Transceiver):
        model = load_checkpoint(model)
    return model


@torch.no_grad()
def run_sweep(entries: Sequence[SweepEntry], snr_list: Sequence[float], test_set,
              seed: int = 0, p: float = 1.0) -> SweepResult:
    """Evaluate every (checkpoint, SNR) cell on every test cloud.

    Each sample draws its noise from ``derive_seed(cell_seed, sample_id)``.
    """
    test = np.asarray(test_set, dtype=np.float32)
    if test.ndim != 3 or len(test) == 0:
        raise DatasetError("empty test set")
    models = [_resolve(e) for e in entries]
    for e, m in zip(entries, models):
        if m.config.bandwidth_n != e.bandwidth:
            raise ValueError(
                f"checkpoint for {e.label} has bandwidth {m.config.bandwidth_n}, "
                f"sweep column expects {e.bandwidth}")
    rows, pools = [], {}
    for e, m in zip(entries, models):
        m.eval()
        snrs = [s for s in snr_list if e.snrs is None or s in e.snrs]
        pool = m.pool.basis.detach().double().numpy()
        key = e.label if e.snrs is None else e.label + "@" + "_".join(map(_snr_tag, snrs))
        pools[key] = pool
        for snr in snrs:
            cs = cell_seed(seed, e.label, float(snr))
            cfg = ch.ChannelConfig(float(snr), e.bandwidth, cs)
            for i, truth in enumerate(test):
                gen = torch.Generator().manual_seed(ch.derive_seed(cs, i))
                recon, _ = m(torch.from_numpy(truth), cfg, gen)
                rep = evaluate(recon[0].double().numpy(), truth.astype(np.float64), pool, p)
                row = rep.to_row(i, float(snr), e.bandwidth)
                row.update(label=e.label, variant=e.variant)
                rows.append(row)
    return SweepResult(rows, pools)


def _snr_tag(snr: float) -> str:
    return "inf" if snr == math.inf else f"{snr:g}"


def verify_aggregates(out_dir, rtol: float = 1e-12) -> list:
    """Recompute aggregates from ``per_sample.csv`` and list any disagreement."""
    out_dir = Path(out_dir)
    fresh = aggregate_rows(_read_rows(out_dir / "per_sample.csv"))
    stored = _read_rows(out_dir / "aggregate.csv")
    problems = []
    if len(fresh) != len(stored):
        problems.append(f"expected {len(fresh)} aggregate rows, found {len(stored)}")
        return problems
    for a, b in zip(fresh, stored):
        for k, v in a.items():
            w = b.get(k)
            if isinstance(v, float):
                if w is None or not (v == w or math.isclose(v, w, rel_tol=rtol)):
                    problems.append(f"{a['label']} @ {a['snr_db']} dB: {k} {w} != {v}")
            elif str(v) != str(w if w is not None else ""):
                problems.append(f"{a['label']} @ {a['snr_db']} dB: {k} {w} != {v}")
    return problems


# -- plots ---------------------------------------------------------------

PANELS = (("psnr_d1", "D1 PSNR (dB)"), ("psnr_d2", "D2 PSNR (dB)"), ("cd", "Chamfer distance"),
          ("ortho_metric", "|OO^T - I|_F"))
GRAM_CLIP = 1.0


def emit_report(result: SweepResult, out_dir, stat: str = "mean") -> list:
    """Write CSV tables, metric-vs-SNR panels and pool Gram heatmaps.

    Returns the written paths. An empty result raises before anything is
    written.
    """
    if not result.rows:
        raise ValueError("empty sweep result; nothing to report")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.write_csv(out_dir)
    written = [out_dir / "per_sample.csv", out_dir / "aggregate.csv", out_dir / "pools.npz"]
    agg = result.aggregate()
    for key, ylabel in PANELS:
        fig, ax = plt.subplots(figsize=(5, 4))
        for label in result.labels():
            pts = sorted((r["snr_db"], r[f"{stat}_{key}"]) for r in agg
                         if r["label"] == label and math.isfinite(r["snr_db"])
                         and r[f"{stat}_{key}"] != "" and math.isfinite(r[f"{stat}_{key}"]))
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", label=label)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        if ax.lines:
            ax.legend()
        path = out_dir / f"{key}_vs_snr.png"
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    for name, pool in result.pools.items():
        pool = np.asarray(pool, dtype=np.float64)
        gram = np.clip(np.abs(pool @ pool.T), 0.0, GRAM_CLIP)
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(gram, vmin=0.0, vmax=GRAM_CLIP, cmap="viridis")
        ax.set_title(f"|OO^T| {name}")
        fig.colorbar(im, ax=ax, fraction=0.046)
        path = out_dir / f"gram_{name.replace('@', '_at_')}.png"
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
