"""Command-line entry point: ``spectral-rocket <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, metrics, training
from .data import atomic_write_bytes, atomic_write_text, batch_indices, fit_normalization, load_manifest, save_manifest
from .harness import Dataset, ExperimentConfig, MissingDataError

COMMANDS = ("ingest", "fit-transform", "train", "eval", "sweep-share", "sweep-scale", "bench", "report")


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v]


def _models(s: str) -> list[str]:
    return [v for v in s.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; flags override its values")
    common.add_argument("--manifest", help="dataset manifest JSON")
    common.add_argument("--model", type=_models, help="model name(s), comma separated")
    common.add_argument("--shares", type=_floats, help="share percentages, e.g. 5,10,25,50,75,100")
    common.add_argument("--scales", type=_floats, help="HDC scales, e.g. 1,2,5,7")
    common.add_argument("--seeds", type=_ints, help="seeds, e.g. 0,1,2,3,4")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float, help="learning rate (default depends on the model)")
    common.add_argument("--scale", type=float, help="single HDC scale; shorthand for --scales S")
    common.add_argument("--out", help="output directory (or file for ingest/fit-transform)")
    common.add_argument("--resume", action="store_true", help="reuse finished cells under --out")
    common.add_argument("--workers", type=int)
    common.add_argument("--standardize", action="store_true", help="standardize ROCKET features on the fit batch")
    common.add_argument("--allow-missing", action="store_true", help="skip manifest images with no files")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spectral-rocket", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    ing = sub.add_parser("ingest", parents=[common], help="validate a dataset and persist normalization bounds")
    ing.add_argument("--synthetic", metavar="DIR", help="write a synthetic demo dataset to DIR first")
    sub.add_parser("fit-transform", parents=[common], help="fit a (HDC-)MiniROCKET transform and save it")
    sub.add_parser("train", parents=[common], help="train one model per seed and save checkpoints")
    ev = sub.add_parser("eval", parents=[common], help="full evaluation, or score one checkpoint")
    ev.add_argument("--checkpoint", help="evaluate this checkpoint instead of running the full protocol")
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    sub.add_parser("sweep-share", parents=[common], help="limited-data share sweep")
    sub.add_parser("sweep-scale", parents=[common], help="HDC scale sweep on validation data")
    b = sub.add_parser("bench", parents=[common], help="inference throughput")
    b.add_argument("--spectra", type=int, default=harness.BENCH_SPECTRA)
    b.add_argument("--length", type=int, help="spectrum length when no manifest is given")
    rep = sub.add_parser("report", parents=[common], help="difference tables and SVG curves from a results CSV")
    rep.add_argument("--results", help="results CSV (default <out>/share_sweep.csv)")
    rep.add_argument("--metric", default="mIoU", choices=harness.METRICS)
    return p


def make_config(args, require_manifest: bool = True) -> ExperimentConfig:
    overrides = {
        "manifest": args.manifest,
        "models": args.model,
        "shares": args.shares,
        "scales": [args.scale] if args.scale is not None else args.scales,
        "seeds": args.seeds,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "out": args.out,
        "resume": args.resume or None,
        "allow_missing": args.allow_missing or None,
        "standardize": args.standardize or None,
        "workers": args.workers,
    }
    if args.config:
        return ExperimentConfig.load(args.config, **overrides)
    if not args.manifest and require_manifest:
        raise SystemExit("error: --manifest (or --config) is required")
    overrides["manifest"] = args.manifest or ""
    return ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def _emit(rows, out: Path, name: str):
    path = harness.write_csv(rows, out / name)
    atomic_write_text(out / f"{path.stem}.run.json", json.dumps(_run_manifest(rows), indent=2))
    print(harness.rows_to_csv(harness.summary_rows(rows)), end="")
    print(f"wrote {path}", file=sys.stderr)


def _run_manifest(rows) -> dict:
    return {"rows": len(rows), "config_hash": rows[0]["config_hash"] if rows else None,
            "code_version": rows[0]["code_version"] if rows else None}


def cmd_ingest(args):
    if args.synthetic:
        from .synthetic import make_dataset

        args.manifest = str(make_dataset(args.synthetic))
        print(f"synthetic dataset written to {args.manifest}")
    if not args.manifest:
        raise SystemExit("error: --manifest is required")
    manifest = load_manifest(args.manifest)
    missing = harness.missing_images(manifest)
    for m in missing:
        print(f"missing: {m}", file=sys.stderr)
    if missing and not args.allow_missing:
        return 2
    manifest = fit_normalization(manifest)
    target = Path(args.out) if args.out else Path(args.manifest)
    save_manifest(manifest, target)
    counts = {s: len(manifest.split_ids(s)) - sum(m in missing for m in manifest.split_ids(s))
              for s in ("train", "val", "test")}
    print(json.dumps({"manifest": str(target), "bands": manifest.effective_bands, "images": counts}))
    return 0


def cmd_fit_transform(args):
    cfg = make_config(args)
    data = Dataset(cfg.manifest, cfg.allow_missing)
    kind = cfg.models[0]
    if kind == "liunet":
        raise SystemExit("error: fit-transform applies to minirocket or hdc-minirocket")
    seed = cfg.seeds[0]
    px = data.pixels(data.ids("train"))
    first = batch_indices(len(px), cfg.train_config(kind, seed).batch_size, seed, 0)[0]
    model = training.build_model(kind, data.length, data.classes, seed=seed, scale=cfg.scales[0])
    model.prepare(px.spectra[first])
    target = Path(args.out or f"{kind}.mrkt")
    atomic_write_bytes(target, model.fitted.to_bytes())
    print(f"wrote {target}")
    return 0


def cmd_train(args):
    cfg = make_config(args)
    data = Dataset(cfg.manifest, cfg.allow_missing)
    for m in cfg.models:
        for s in harness.model_scales(m, cfg.scales)[:1]:
            for seed in cfg.seeds:
                cell = harness.Cell(m, cfg.shares[0], s, seed, split="val")
                rec = harness.run_cell(cell, data, cfg)
                best = rec["log"][rec["best_epoch"] - 1]
                print(json.dumps({"model": m, "seed": seed, "best_epoch": rec["best_epoch"],
                                  "checkpoint": str(Path(cfg.out) / "models" / f"{cell.name}.ckpt"),
                                  **{k: best[k] for k in harness.METRICS}}))
    return 0


def cmd_eval(args):
    cfg = make_config(args)
    data = Dataset(cfg.manifest, cfg.allow_missing)
    if args.checkpoint:
        model = training.load_model(args.checkpoint)
        cm = training.evaluate(model, data.pixels(data.ids(args.split)))
        print(json.dumps({"split": args.split, **metrics.summary(cm), "confusion": cm.tolist()}))
        return 0
    _emit(harness.run_full_eval(cfg, data), Path(cfg.out), "full_eval.csv")
    return 0


def cmd_sweep_share(args):
    if args.shares is None and not args.config:
        args.shares = list(harness.SHARES)
    cfg = make_config(args)
    _emit(harness.run_share_sweep(cfg), Path(cfg.out), "share_sweep.csv")
    return 0


def cmd_sweep_scale(args):
    if args.scales is None and args.scale is None and not args.config:
        args.scales = [float(s) for s in harness.SCALES]
    args.model = ["hdc-minirocket"]
    cfg = make_config(args)
    _emit(harness.run_scale_sweep(cfg), Path(cfg.out), "scale_sweep.csv")
    return 0


def cmd_bench(args):
    if args.model is None and not args.config:
        args.model = list(training.MODELS)
    cfg = make_config(args, require_manifest=False)
    length = args.length or (None if cfg.manifest else 25)
    report = harness.bench_inference(cfg, length=length, n=args.spectra, workers=args.workers)
    atomic_write_text(Path(cfg.out) / "bench.json", json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return 0


def cmd_report(args):
    out = Path(args.out or "results")
    src = Path(args.results) if args.results else out / "share_sweep.csv"
    rows = harness.read_csv(src)
    if not rows:
        raise SystemExit(f"error: {src} has no rows")
    classes = [k[len("acc_"):] for k in rows[0] if k.startswith("acc_")]
    models = sorted({r["model"] for r in rows})
    pairs = [(a, b) for i, a in enumerate(models) for b in models[i + 1:]]
    if args.model and len(args.model) == 2:
        pairs = [tuple(args.model)]
    for a, b in pairs:
        table = harness.difference_table(rows, a, b, classes)
        harness.write_csv(table, out / f"diff_{a}_vs_{b}.csv")
        print(f"wrote {out / f'diff_{a}_vs_{b}.csv'}")
    svg = harness.svg_line_plot(harness.share_curves(rows, args.metric), title=f"{args.metric} vs training share",
                                xlabel="share of training images (%)", ylabel=args.metric)
    atomic_write_text(out / f"curve_{args.metric}.svg", svg)
    print(f"wrote {out / f'curve_{args.metric}.svg'}")
    return 0


HANDLERS = {
    "ingest": cmd_ingest,
    "fit-transform": cmd_fit_transform,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-share": cmd_sweep_share,
    "sweep-scale": cmd_sweep_scale,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except MissingDataError as e:
        print(f"error: {e}", file=sys.stderr)
        for m in e.missing:
            print(f"  missing: {m}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
