"""
Experiment orchestration: full evaluation, share sweep, scale sweep and
inference benchmarking.

Every run decomposes into independent cells keyed by
``(model, share, scale, seed, split)``. A cell trains one model, keeps the
epoch with the best validation mIoU and evaluates it. Finished cells are
stored as JSON under ``<out>/cells`` so an interrupted sweep can resume.
Rows written to CSV carry provenance: the run's config hash and the package
version.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, metrics, training
from .data import (
    PixelSet,
    atomic_write_text,
    extract_labeled_pixels,
    fit_normalization,
    load_cube,
    load_manifest,
    missing_images,
    preprocess,
    sample_share,
)
from .hdc import DEFAULT_SCALE, SCALES  # noqa: F401  (re-exported for the CLI)
from .training import MODELS, TrainConfig

log = logging.getLogger(__name__)

SHARES = (5, 10, 25, 50, 75, 100)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
METRICS = ("OA", "AA", "F1", "mIoU")
SCALE_SWEEP_SHARE = 50.0
BENCH_SPECTRA = 10_000


class MissingDataError(FileNotFoundError):
    """Raised before any training when manifest entries have no files on disk."""

    def __init__(self, missing: list[str]):
        self.missing = missing
        super().__init__("missing dataset files for image(s): " + ", ".join(missing))


@dataclass
class ExperimentConfig:
    manifest: str
    models: tuple[str, ...] = ("minirocket",)
    shares: tuple[float, ...] = (100,)
    scales: tuple[float, ...] = (DEFAULT_SCALE,)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    epochs: int | None = None
    batch_size: int | None = None
    learning_rate: float | None = None
    bias_fit_samples: int | None = None
    standardize: bool = False
    out: str = "results"
    resume: bool = False
    allow_missing: bool = False
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.models, str):
            self.models = (self.models,)
        self.models = tuple(self.models)
        self.shares = tuple(float(p) for p in self.shares)
        self.scales = tuple(float(s) for s in self.scales)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    def validate(self):
        if not self.models:
            raise ValueError("at least one model is required")
        for m in self.models:
            if m not in MODELS:
                raise ValueError(f"unknown model {m!r}; expected one of {MODELS}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not self.shares:
            raise ValueError("shares must be non-empty")
        if any(not 0 < p <= 100 for p in self.shares):
            raise ValueError("shares are percentages in (0, 100]")
        if "hdc-minirocket" in self.models and not self.scales:
            raise ValueError("hdc-minirocket needs at least one scale")
        if any(s < 0 for s in self.scales):
            raise ValueError("scales must be non-negative")

    def train_config(self, model: str, seed: int) -> TrainConfig:
        return TrainConfig.for_model(model, epochs=self.epochs, batch_size=self.batch_size,
                                     learning_rate=self.learning_rate, seed=seed,
                                     bias_fit_samples=self.bias_fit_samples)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("models", "shares", "scales", "seeds"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "model" in d:
            d.setdefault("models", d.pop("model"))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as f:
            d = json.load(f)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def digest(self) -> str:
        """Hash of everything that affects results (not output location or parallelism)."""
        d = self.to_dict()
        for k in ("out", "resume", "workers"):
            d.pop(k)
        return _hash(d)


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


# -- data ------------------------------------------------------------------------


class Dataset:
    """Manifest plus preprocessed per-image pixel sets, loaded lazily and cached."""

    def __init__(self, manifest_path, allow_missing: bool = False):
        path = Path(manifest_path)
        if not path.exists():
            raise MissingDataError([str(path)])
        self.manifest = load_manifest(path)
        missing = missing_images(self.manifest)
        if missing:
            if not allow_missing:
                raise MissingDataError(missing)
            log.warning("skipping %d missing image(s): %s", len(missing), ", ".join(missing))
        self.missing = set(missing)
        if self.manifest.norm_min is None:
            self.manifest = fit_normalization(self.manifest)
        self._cache: dict[str, PixelSet] = {}

    @property
    def name(self) -> str:
        return self.manifest.name

    @property
    def length(self) -> int:
        return self.manifest.effective_bands

    @property
    def classes(self) -> int:
        return self.manifest.class_count

    def ids(self, split: str) -> list[str]:
        return [i for i in self.manifest.split_ids(split) if i not in self.missing]

    def pixels(self, ids) -> PixelSet:
        parts = []
        for i in ids:
            if i not in self._cache:
                cube = preprocess(load_cube(self.manifest.image_path(i), self.manifest, i), self.manifest)
                self._cache[i] = extract_labeled_pixels(cube, self.manifest.ignore_label)
            parts.append(self._cache[i])
        return PixelSet.concat(parts, bands=self.length)


# -- cells -----------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    model: str
    share: float
    scale: float | None
    seed: int
    split: str = "test"

    def __post_init__(self):
        object.__setattr__(self, "share", float(self.share))
        if self.scale is not None:
            object.__setattr__(self, "scale", float(self.scale))

    @property
    def name(self) -> str:
        sc = "na" if self.scale is None else f"{self.scale:g}"
        return f"{self.model}_p{self.share:g}_s{sc}_seed{self.seed}_{self.split}"


def model_scales(model: str, scales) -> list[float | None]:
    if model == "hdc-minirocket":
        return list(scales)
    return [0.0] if model == "minirocket" else [None]


def _cell_key(cell: Cell, data: Dataset, config: ExperimentConfig) -> str:
    tc = config.train_config(cell.model, cell.seed)
    return _hash({"cell": asdict(cell), "dataset": data.manifest.to_dict(), "train": asdict(tc),
                  "standardize": config.standardize})


def run_cell(cell: Cell, data: Dataset, config: ExperimentConfig) -> dict:
    """Train and evaluate one cell, or reload it when resuming.

    The returned record holds the confusion matrix of the evaluation split,
    the per-class train counts, the best epoch and the training log.
    """
    out = Path(config.out)
    path = out / "cells" / f"{cell.name}.json"
    key = _cell_key(cell, data, config)
    if config.resume and path.exists():
        rec = json.loads(path.read_text())
        if rec.get("key") == key:
            log.info("resuming %s", cell.name)
            return rec
        log.warning("stale cell %s ignored (config changed)", cell.name)
    train_ids = sample_share(data.ids("train"), cell.share, cell.seed)
    train_px = data.pixels(train_ids)
    val_px = data.pixels(data.ids("val"))
    eval_px = val_px if cell.split == "val" else data.pixels(data.ids(cell.split))
    model = training.build_model(cell.model, data.length, data.classes, seed=cell.seed,
                                 scale=cell.scale or 0.0, workers=config.workers, standardize=config.standardize)
    t0 = time.perf_counter()
    result = training.train(model, train_px, val_px, config.train_config(cell.model, cell.seed))
    cm = training.evaluate(result.model, eval_px)
    training.save_model(result.model, out / "models" / f"{cell.name}.ckpt")
    write_csv(result.log, out / "logs" / f"{cell.name}.csv")
    rec = {
        "key": key,
        "cell": asdict(cell),
        "train_images": train_ids,
        "train_counts": train_px.class_counts(data.classes).tolist(),
        "confusion": cm.tolist(),
        "best_epoch": result.best_epoch,
        "log": result.log,
        "seconds": time.perf_counter() - t0,
    }
    atomic_write_text(path, json.dumps(rec, indent=1))
    return rec


def cell_row(rec: dict, data: Dataset, config_hash: str) -> dict:
    cell = rec["cell"]
    cm = np.asarray(rec["confusion"])
    acc = metrics.per_class_accuracy(cm)
    row = {
        "dataset": data.name,
        "model": cell["model"],
        "share_pct": cell["share"],
        "scale": "" if cell["scale"] is None else cell["scale"],
        "seed": cell["seed"],
        **metrics.summary(cm),
    }
    for name, a in zip(data.manifest.class_names, acc):
        row[f"acc_{name}"] = a
    for name, n in zip(data.manifest.class_names, rec["train_counts"]):
        row[f"n_train_{name}"] = n
    row["split"] = cell["split"]
    row["absent_in_train"] = ";".join(
        name for name, n in zip(data.manifest.class_names, rec["train_counts"]) if n == 0
    )
    row["best_epoch"] = rec["best_epoch"]
    row["config_hash"] = config_hash
    row["code_version"] = __version__
    return row


def mean_rows(rows: list[dict]) -> list[dict]:
    """One arithmetic-mean row per (model, share, scale, split) group; seed column is ``mean``."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["model"], r["share_pct"], r["scale"], r["split"]), []).append(r)
    out = []
    for members in groups.values():
        m = dict(members[0])
        m["seed"] = "mean"
        for k, v in m.items():
            if k.startswith(("acc_", "n_train_")) or k in METRICS or k == "best_epoch":
                vals = np.array([r[k] for r in members], dtype=np.float64)
                m[k] = float(np.nanmean(vals)) if not np.isnan(vals).all() else math.nan
        m["absent_in_train"] = ";".join(sorted({c for r in members for c in r["absent_in_train"].split(";") if c}))
        out.append(m)
    return out


def _run(config: ExperimentConfig, cells: list[Cell], data: Dataset | None = None) -> list[dict]:
    data = data or Dataset(config.manifest, config.allow_missing)
    digest = config.digest()
    rows = [cell_row(run_cell(c, data, config), data, digest) for c in cells]
    return rows + mean_rows(rows) if len(config.seeds) > 1 else rows


def summary_rows(rows: list[dict]) -> list[dict]:
    """Seed-mean rows when present, otherwise the (single-seed) rows themselves."""
    means = [r for r in rows if str(r["seed"]) == "mean"]
    return means or list(rows)


def run_full_eval(config: ExperimentConfig, data: Dataset | None = None) -> list[dict]:
    """Per-seed and seed-mean test rows for every model, trained on the full train split."""
    cells = [Cell(m, 100, s, seed) for m in config.models for s in model_scales(m, config.scales)[:1]
             for seed in config.seeds]
    if "hdc-minirocket" in config.models and len(config.scales) > 1:
        log.info("full evaluation uses the first configured scale (%g) for hdc-minirocket", config.scales[0])
    return _run(config, cells, data)


def run_share_sweep(config: ExperimentConfig, data: Dataset | None = None) -> list[dict]:
    """Test rows per (model, share, seed) with per-class accuracy and train counts."""
    cells = [Cell(m, p, s, seed) for m in config.models for s in model_scales(m, config.scales)[:1]
             for p in sorted(config.shares) for seed in config.seeds]
    return _run(config, cells, data)


def run_scale_sweep(config: ExperimentConfig, data: Dataset | None = None, share: float = SCALE_SWEEP_SHARE) -> list[dict]:
    """Validation rows per (scale, seed) for HDC-MiniROCKET trained on ``share`` percent.

    Each row also carries ``best_scale_<metric>``: the scale whose seed-mean
    validation metric is highest, ties to the smaller scale. Selection across
    metrics is left to the reader.
    """
    cells = [Cell("hdc-minirocket", share, s, seed, split="val") for s in config.scales for seed in config.seeds]
    rows = _run(config, cells, data)
    means = summary_rows(rows)
    for metric in METRICS:
        best = max(sorted(means, key=lambda r: r["scale"]), key=lambda r: r[metric])["scale"]
        for r in rows:
            r[f"best_scale_{metric}"] = best
    return rows


# -- tables ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    header = list(rows[0])
    for r in rows[1:]:
        header += [k for k in r if k not in header]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(k, "")) for k in header])
    return buf.getvalue()


def write_csv(rows: list[dict], path) -> Path:
    atomic_write_text(path, rows_to_csv(rows))
    return Path(path)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def difference_table(rows: list[dict], model_a: str, model_b: str, class_names) -> list[dict]:
    """Per-class accuracy difference A minus B on summary rows, one block per share.

    ``sample_count`` is the class's mean number of training pixels at that share.
    """
    def key(r):
        return float(r["share_pct"])

    means = summary_rows(rows)
    a = {key(r): r for r in means if r["model"] == model_a}
    b = {key(r): r for r in means if r["model"] == model_b}
    out = []
    for share in sorted(set(a) & set(b)):
        for name in class_names:
            acc_a, acc_b = _num(a[share][f"acc_{name}"]), _num(b[share][f"acc_{name}"])
            out.append({
                "share_pct": share,
                "class": name,
                "sample_count": _num(a[share][f"n_train_{name}"]),
                f"acc_{model_a}": acc_a,
                f"acc_{model_b}": acc_b,
                "delta": acc_a - acc_b,
            })
    return out


def _num(v) -> float:
    return math.nan if v in ("", None) else float(v)


def share_curves(rows: list[dict], metric: str = "mIoU") -> dict[str, list[tuple[float, float]]]:
    """Seed-mean ``metric`` against share, one series per model (and scale)."""
    series: dict[str, list[tuple[float, float]]] = {}
    for r in summary_rows(rows):
        name = r["model"] if r["model"] != "hdc-minirocket" else f"hdc-minirocket s={_num(r['scale']):g}"
        series.setdefault(name, []).append((_num(r["share_pct"]), _num(r[metric])))
    return {k: sorted(v) for k, v in series.items()}


_PALETTE = ("#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#00798c")


def svg_line_plot(series: dict[str, list[tuple[float, float]]], title: str = "", xlabel: str = "",
                  ylabel: str = "", width: int = 560, height: int = 360) -> str:
    """Minimal standalone SVG line chart with a legend."""
    pts = [p for s in series.values() for p in s if not math.isnan(p[1])]
    if not pts:
        raise ValueError("nothing to plot")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(0.0, min(p[1] for p in pts)), max(1.0, max(p[1] for p in pts))
    x1 = x1 if x1 > x0 else x0 + 1
    left, right, top, bottom = 60, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    e = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
         f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
         '<rect width="100%" height="100%" fill="white"/>',
         f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
         f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
         f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in np.linspace(y0, y1, 6):
        e.append(f'<text x="{left - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.2f}</text>')
    for x in sorted({p[0] for p in pts}):
        e.append(f'<text x="{sx(x):.1f}" y="{top + ph + 16}" text-anchor="middle">{x:g}</text>')
    e.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    e.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
             f'transform="rotate(-90 14 {top + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for i, (name, s) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        good = [p for p in s if not math.isnan(p[1])]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in good)
        e.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
        for x, y in good:
            e.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        ly = top + 14 * i + 6
        e.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 28}" y2="{ly}" stroke="{color}" '
                 f'stroke-width="2"/>')
        e.append(f'<text x="{left + pw + 32}" y="{ly + 4}">{_esc(name)}</text>')
    e.append("</svg>")
    return "\n".join(e) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# -- benchmark -------------------------------------------------------------------


def machine_descriptor() -> dict:
    import numba

    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "code_version": __version__,
    }


def predict_parallel(model, spectra, workers: int = 1, chunk: int = 1024) -> np.ndarray:
    """Predictions computed over row chunks on ``workers`` threads; output independent of ``workers``."""
    spectra = np.asarray(spectra, dtype=np.float64)
    if workers <= 1:
        return training.predict(model, spectra)
    parts = [spectra[i : i + chunk] for i in range(0, len(spectra), chunk)]
    with ThreadPoolExecutor(workers) as pool:
        return np.concatenate(list(pool.map(lambda p: training.predict(model, p), parts)))


def _bench_model(kind: str, length: int, classes: int, seed: int, scale: float, out: Path):
    """Latest checkpoint for ``kind`` under ``out/models`` or an untrained stand-in."""
    ckpts = sorted((out / "models").glob(f"{kind}_*.ckpt")) if out.exists() else []
    for p in ckpts:
        model = training.load_model(p)
        if model.length == length:
            return model, str(p)
    model = training.build_model(kind, length, classes, seed=seed, scale=scale)
    model.prepare(np.random.default_rng(seed).random((256, length)))
    return model, None


def bench_inference(config: ExperimentConfig, length: int | None = None, classes: int = 3,
                    n: int = BENCH_SPECTRA, workers: int | None = None, repeats: int = 1) -> dict:
    """Spectra per second for each model, single- and multi-worker, on a fixed synthetic workload.

    Uses checkpoints found under ``<out>/models`` when present; otherwise a
    freshly initialised model of the same architecture (timing does not
    depend on the weights).
    """
    if length is None:
        data = Dataset(config.manifest, config.allow_missing)
        length, classes = data.length, data.classes
    workers = workers or os.cpu_count() or 1
    x = np.random.default_rng(12345).random((n, length))
    report = {"machine": machine_descriptor(), "spectra": n, "length": length, "models": []}
    for kind in config.models:
        scale = config.scales[0] if kind == "hdc-minirocket" else 0.0
        model, source = _bench_model(kind, length, classes, config.seeds[0], scale, Path(config.out))
        training.predict(model, x[:64])  # warm-up (JIT compile, caches)
        entry = {"model": kind, "checkpoint": source}
        preds = {}
        for label, w in (("single", 1), ("multi", workers)):
            best = math.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                preds[label] = predict_parallel(model, x, w)
                best = min(best, time.perf_counter() - t0)
            entry[f"{label}_workers"] = w
            entry[f"{label}_seconds"] = best
            entry[f"{label}_spectra_per_s"] = n / best
        entry["outputs_identical"] = bool(np.array_equal(preds["single"], preds["multi"]))
        report["models"].append(entry)
    return report
