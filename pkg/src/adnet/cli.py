"""Command-line entry point: subsample, train, eval, ablate, uncertainty, actmaps.

Exit codes: 0 success, 2 usage error, 1 runtime failure. All artifacts are
byte-deterministic given flags and seeds; wall-clock metadata lives only in
the run_meta.json sidecar.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import model as M
from .augment import ADVANCED_KINDS, AugConfig
from .config import (DIST_FLAG_MAP, SCHEDULE_FLAG_MAP, RunConfig,
                     build_run_config, read_ini)
from .data import ImageSample, SubsetManifest, load_dataset, materialize, sample_subset
from .errors import AdnetError, MissingCheckpoint
from .evalsuite import (accuracy, activation_diff, mc_dropout_sweep,
                        render_signed_overlay, save_image)
from .trainer import fit


def _usage(msg: str) -> int:
    print(f"usage error: {msg}", file=sys.stderr)
    return 2


def _load_image_file(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def _load_checkpoint(path):
    p = Path(path)
    if not p.is_file():
        raise MissingCheckpoint(f"checkpoint not found: {p}")
    return M.load_checkpoint(p)


def _add_data_flags(sp):
    sp.add_argument("--config", type=Path, default=None, help="INI run config")
    sp.add_argument("--data", type=Path, default=None, help="dataset root directory")
    sp.add_argument("--out", type=Path, default=None, help="output directory")


def _add_train_flags(sp):
    sp.add_argument("--percent", type=float, default=None,
                    help="low-data percentage of the train split")
    sp.add_argument("--manifest", type=Path, default=None,
                    help="existing subset manifest to materialize")
    sp.add_argument("--seed-data", type=int, default=None)
    sp.add_argument("--seed-model", type=int, default=None)
    sp.add_argument("--seed-aug", type=int, default=None)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--alpha-decay", action="store_true", default=None)
    sp.add_argument("--dist", choices=sorted(DIST_FLAG_MAP), default=None)
    sp.add_argument("--schedule", choices=sorted(SCHEDULE_FLAG_MAP), default=None)
    sp.add_argument("--vanilla", action="store_true", default=None,
                    help="cross-entropy-only baseline (forces alpha to 0)")
    sp.add_argument("--branches", choices=("single", "double"), default=None)
    sp.add_argument("--advanced-aug", choices=ADVANCED_KINDS, default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--d-aval", type=float, default=None)
    sp.add_argument("--output-side", type=int, default=None)
    sp.add_argument("--dropout", type=float, default=None)
    sp.add_argument("--eval-every", type=int, default=None)
    sp.add_argument("--checkpoint-every", type=int, default=None)
    sp.add_argument("--grad-clip", type=float, default=None)
    sp.add_argument("--widths", type=str, default=None,
                    help="backbone stage widths, e.g. 16,32,64")
    sp.add_argument("--blocks", type=str, default=None,
                    help="residual blocks per stage, e.g. 1,1,1")
    sp.add_argument("--tag", default=None)


def _run_config(args) -> RunConfig:
    sections = read_ini(args.config) if args.config else {}
    g = lambda name: getattr(args, name, None)
    overrides = {
        "data": {
            "root": str(args.data) if g("data") else None,
            "percent": g("percent"),
            "manifest": str(g("manifest")) if g("manifest") else None,
        },
        "run": {
            "out": str(args.out) if g("out") else None,
            "tag": g("tag"),
        },
        "train": {
            "seed_data": g("seed_data"),
            "seed_model": g("seed_model"),
            "seed_augment": g("seed_aug"),
            "scheduler_mode": SCHEDULE_FLAG_MAP[g("schedule")] if g("schedule") else None,
            "vanilla": g("vanilla"),
            "branches": g("branches"),
            "steps_max": g("steps"),
            "batch_size": g("batch_size"),
            "lr": g("lr"),
            "d_aval": g("d_aval"),
            "dropout_rate": g("dropout"),
            "eval_every": g("eval_every"),
            "checkpoint_every": g("checkpoint_every"),
            "grad_clip": g("grad_clip"),
        },
        "loss": {
            "alpha": g("alpha"),
            "alpha_decay": g("alpha_decay"),
            "dist_kind": DIST_FLAG_MAP[g("dist")] if g("dist") else None,
        },
        "aug": {
            "advanced": g("advanced_aug"),
            "output_side": g("output_side"),
        },
        "model": {
            "widths": tuple(int(x) for x in g("widths").split(",")) if g("widths") else None,
            "blocks": tuple(int(x) for x in g("blocks").split(",")) if g("blocks") else None,
        },
    }
    return build_run_config(sections, overrides)


def _aug_for_checkpoint(rc: RunConfig, args, meta: dict) -> AugConfig:
    """Eval-time preprocessing: explicit flags win, else checkpoint metadata."""
    aug = rc.train.aug
    if getattr(args, "output_side", None):
        return aug
    if args.config is None and "output_side" in meta:
        aug = replace(
            aug,
            output_side=int(meta["output_side"]),
            mean=tuple(meta.get("normalize_mean", aug.mean)),
            std=tuple(meta.get("normalize_std", aug.std)),
        )
    return aug


def _prepare_train_data(rc: RunConfig, out: Path | None):
    train_ds = load_dataset(rc.data_root, "train")
    if rc.manifest is not None:
        manifest = SubsetManifest.load(rc.manifest)
        train_ds = materialize(train_ds, manifest)
    elif rc.percent is not None and rc.percent < 100.0:
        manifest = sample_subset(train_ds, rc.percent, rc.train.seed_data)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            manifest.save(out / "subset_manifest.txt")
        train_ds = materialize(train_ds, manifest)
    try:
        test_ds = load_dataset(rc.data_root, "test")
    except AdnetError:
        test_ds = None
    return train_ds, test_ds


# ---------------------------------------------------------------- commands

def cmd_subsample(args) -> int:
    if args.data is None:
        return _usage("subsample requires --data")
    if not (0.0 < args.percent <= 100.0):
        return _usage(f"--percent must lie in (0, 100], got {args.percent}")
    ds = load_dataset(args.data, "train")
    manifest = sample_subset(ds, args.percent, args.seed)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"manifest_p{args.percent:g}_s{args.seed}.txt"
    manifest.save(path)
    for c, name in enumerate(ds.classes):
        print(f"{name}\t{len(manifest.selected.get(c, []))}")
    print(f"wrote {path}")
    return 0


def cmd_train(args) -> int:
    if args.percent is not None and not (0.0 < args.percent <= 100.0):
        return _usage(f"--percent must lie in (0, 100], got {args.percent}")
    rc = _run_config(args)
    if rc.data_root is None:
        return _usage("train requires --data (or [data] root in the config)")
    cfg = rc.train
    print(f"seeds: data={cfg.seed_data} model={cfg.seed_model} "
          f"augment={cfg.seed_augment}")
    out = rc.out_dir
    train_ds, test_ds = _prepare_train_data(rc, out)
    print(f"train samples: {len(train_ds)} over {train_ds.num_classes} classes"
          + (f"; test samples: {len(test_ds)}" if test_ds else ""))
    state, log = fit(train_ds, cfg, test_ds, out_dir=out)
    if test_ds is not None:
        final = accuracy(state, test_ds, cfg.aug)
        print(f"final test accuracy: {final:.2f}")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    rc = _run_config(args)
    state, meta = _load_checkpoint(args.checkpoint)
    root = rc.data_root
    if root is None:
        return _usage("eval requires --data (or [data] root in the config)")
    ds = load_dataset(root, args.split)
    aug = _aug_for_checkpoint(rc, args, meta)
    acc = accuracy(state, ds, aug)
    print(f"accuracy={acc:.2f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval_result.txt").write_text(
            f"split={args.split} samples={len(ds)} accuracy={acc:.4f}\n")
    return 0


def _config_hash(cfg) -> str:
    payload = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def cmd_ablate(args) -> int:
    if args.percent is not None and not (0.0 < args.percent <= 100.0):
        return _usage(f"--percent must lie in (0, 100], got {args.percent}")
    rc = _run_config(args)
    if rc.data_root is None:
        return _usage("ablate requires --data (or [data] root in the config)")
    out = rc.out_dir
    out.mkdir(parents=True, exist_ok=True)
    base = rc.train
    print(f"seeds: data={base.seed_data} model={base.seed_model} "
          f"augment={base.seed_augment}")
    train_ds, test_ds = _prepare_train_data(rc, out)
    eval_ds = test_ds if test_ds is not None else train_ds

    dists = [DIST_FLAG_MAP[d.strip()] for d in args.dists.split(",") if d.strip()]
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    branch_modes = [b.strip() for b in args.branch_modes.split(",") if b.strip()]
    advanced = [a.strip() for a in args.advanced_augs.split(",") if a.strip()]

    cells = []
    if args.include_vanilla:
        cells.append(("vanilla", 0.0, "single", "none",
                      replace(base, vanilla=True, branches="single")))
    for adv in advanced:
        for b in branch_modes:
            for a in alphas:
                for k in dists:
                    cfg = replace(
                        base, vanilla=False, branches=b,
                        loss=replace(base.loss, alpha=a, dist_kind=k),
                        aug=replace(base.aug, advanced=adv),
                    )
                    cells.append((k, a, b, adv, cfg))

    table_path = out / "ablation.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config_hash", "dist_kind", "alpha", "branches",
                         "advanced_aug", "final_acc", "best_acc", "status"])
        for k, a, b, adv, cfg in cells:
            h = _config_hash(cfg)
            try:
                state, log = fit(train_ds, cfg, test_ds, out_dir=None)
                final = accuracy(state, eval_ds, cfg.aug)
                logged = [r.test_acc for r in log.records if r.test_acc is not None]
                best = max(logged + [final])
                row = [h, k, format(a, "g"), b, adv,
                       format(final, ".4f"), format(best, ".4f"), "ok"]
            except Exception as exc:  # keep the grid going, record the cell
                row = [h, k, format(a, "g"), b, adv, "", "", f"failed: {exc}"]
            writer.writerow(row)
            fh.flush()
            print(",".join(str(x) for x in row))
    print(f"wrote {table_path}")
    return 0


def cmd_uncertainty(args) -> int:
    if args.passes < 1:
        return _usage(f"--passes must be >= 1, got {args.passes}")
    rc = _run_config(args)
    state, meta = _load_checkpoint(args.checkpoint)
    aug = _aug_for_checkpoint(rc, args, meta)
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    if any(s < 0 for s in sigmas):
        return _usage(f"--sigmas must be >= 0, got {args.sigmas}")
    pixels = _load_image_file(args.image)
    image = (ImageSample(pixels=pixels, label=args.true_class)
             if args.true_class is not None else pixels)
    report = mc_dropout_sweep(state, image, noise_sigmas=sigmas,
                              n_passes=args.passes, tracked_k=args.tracked,
                              seed=args.seed, aug_cfg=aug)
    out = args.out or Path("runs/uncertainty")
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "uncertainty.csv")
    report.summary_to_csv(out / "uncertainty_summary.csv")
    report.scatter_png(out / "uncertainty.png")
    print(f"tracked classes: {report.tracked}")
    for li, sigma in enumerate(report.noise_levels):
        means = ", ".join(
            f"c{cls}={report.tracked_mean[li, ti]:.3f}"
            for ti, cls in enumerate(report.tracked))
        print(f"sigma={sigma:g}: {means}")
    print(f"artifacts in {out}")
    return 0


def cmd_actmaps(args) -> int:
    rc = _run_config(args)
    state_a, meta = _load_checkpoint(args.checkpoint_a)
    state_b, _ = _load_checkpoint(args.checkpoint_b)
    aug = _aug_for_checkpoint(rc, args, meta)
    pixels = _load_image_file(args.image)
    diff = activation_diff(state_a, state_b, pixels, aug)
    out = args.out or Path("runs/actmaps")
    out.mkdir(parents=True, exist_ok=True)
    save_image(out / "actdiff_overlay.png", diff.overlay)
    side = aug.output_side
    gray = np.full((side, side, 3), 0.5, dtype=np.float32)
    save_image(out / "actdiff_heatmap.png",
               render_signed_overlay(gray, diff.heatmap, strength=1.0))
    print(f"max |activation diff|: {np.abs(diff.heatmap).max():.6g}")
    print(f"artifacts in {out}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="adnet",
        description="Self-distillation training framework for low-data "
                    "fine-grained image classification.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("subsample", help="draw and save a low-data subset manifest")
    _add_data_flags(sp)
    sp.add_argument("--percent", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_subsample)

    sp = sub.add_parser("train", help="run the training loop")
    _add_data_flags(sp)
    _add_train_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on a split")
    _add_data_flags(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--output-side", type=int, default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="sequential grid over loss/alpha/branch/augment")
    _add_data_flags(sp)
    _add_train_flags(sp)
    sp.add_argument("--dists", default="kl,l1,l2,ce,focal")
    sp.add_argument("--alphas", default="0.1")
    sp.add_argument("--branch-modes", default="double,single")
    sp.add_argument("--advanced-augs", default="none")
    sp.add_argument("--include-vanilla", action="store_true")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("uncertainty", help="MC-dropout sweep on one image")
    _add_data_flags(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--image", type=Path, required=True)
    sp.add_argument("--sigmas", default="0,0.05,0.1,0.2,0.4")
    sp.add_argument("--passes", type=int, default=1000)
    sp.add_argument("--tracked", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--true-class", type=int, default=None)
    sp.add_argument("--output-side", type=int, default=None)
    sp.set_defaults(func=cmd_uncertainty)

    sp = sub.add_parser("actmaps", help="activation-map difference of two checkpoints")
    _add_data_flags(sp)
    sp.add_argument("--checkpoint-a", type=Path, required=True)
    sp.add_argument("--checkpoint-b", type=Path, required=True)
    sp.add_argument("--image", type=Path, required=True)
    sp.add_argument("--output-side", type=int, default=None)
    sp.set_defaults(func=cmd_actmaps)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AdnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
