"""Evaluation artifacts: accuracy, MC-dropout uncertainty, activation diffs.

Everything here reads a frozen ModelState and emits plain CSV/PNG files;
nothing mutates parameters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import model as M
from .augment import AugConfig, normalize_view, resize_bilinear
from .data import Dataset, ImageSample
from .errors import (EmptyDataset, InvalidSigma, MalformedLog, SpecMismatch)
from .rng import derive_rng
from .trainer import LOG_HEADER


def eval_view(pixels: np.ndarray, cfg: AugConfig | None = None) -> np.ndarray:
    """Deterministic test-time preprocessing: short-side resize, center crop.

    Output is output_side x output_side x 3, normalized per cfg.
    """
    cfg = cfg or AugConfig()
    p = np.asarray(pixels, dtype=np.float32)
    h, w = p.shape[0], p.shape[1]
    side = cfg.output_side
    scale = side / min(h, w)
    nh = max(side, int(round(h * scale)))
    nw = max(side, int(round(w * scale)))
    p = resize_bilinear(p, nh, nw)
    y0 = (nh - side) // 2
    x0 = (nw - side) // 2
    p = p[y0:y0 + side, x0:x0 + side]
    if cfg.normalize:
        p = normalize_view(p, cfg)
    return p


def _pixels_of(image) -> np.ndarray:
    return image.pixels if isinstance(image, ImageSample) else np.asarray(image)


def _softmax_row(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def accuracy(state: M.ModelState, dataset: Dataset,
             aug_cfg: AugConfig | None = None, batch_size: int = 64) -> float:
    """Top-1 accuracy in percent over the whole dataset, eval mode."""
    if len(dataset) == 0:
        raise EmptyDataset("accuracy needs a non-empty dataset")
    cfg = aug_cfg or AugConfig()
    images = dataset.load_images()
    correct = 0
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        batch = np.stack([eval_view(s.pixels, cfg) for s in chunk])
        _, logits = M.forward(state, batch, mode="eval")
        preds = logits.argmax(axis=1)
        labels = np.array([s.label for s in chunk])
        correct += int((preds == labels).sum())
    return 100.0 * correct / len(images)


# ------------------------------------------------------- MC dropout sweep

@dataclass
class UncertaintyReport:
    noise_levels: tuple[float, ...]
    n_passes: int
    # per level: n_passes (predicted_class, probability) pairs
    predictions: list[list[tuple[int, float]]]
    tracked: list[int]
    tracked_mean: np.ndarray  # levels x tracked
    tracked_std: np.ndarray
    true_class: int | None = None
    extra: dict = dc_field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "pass", "class", "prob"])
            for sigma, rows in zip(self.noise_levels, self.predictions):
                for i, (cls, prob) in enumerate(rows):
                    w.writerow([format(sigma, ".6g"), i, cls, format(prob, ".8g")])

    def summary_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "class", "mean_prob", "std_prob"])
            for li, sigma in enumerate(self.noise_levels):
                for ti, cls in enumerate(self.tracked):
                    w.writerow([format(sigma, ".6g"), cls,
                                format(self.tracked_mean[li, ti], ".8g"),
                                format(self.tracked_std[li, ti], ".8g")])

    def scatter_png(self, path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4.5))
        xs = np.arange(len(self.noise_levels))
        for ti, cls in enumerate(self.tracked):
            label = f"class {cls}"
            if self.true_class is not None and cls == self.true_class:
                label += " (true)"
            ax.errorbar(xs, self.tracked_mean[:, ti], yerr=self.tracked_std[:, ti],
                        marker="D", capsize=3, label=label)
        ax.set_xticks(xs)
        ax.set_xticklabels([format(s, "g") for s in self.noise_levels])
        ax.set_xlabel("noise sigma")
        ax.set_ylabel("mean probability over MC passes")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)


def mc_dropout_sweep(state: M.ModelState, image, noise_sigmas=(0.0, 0.05, 0.1, 0.2, 0.4),
                     n_passes: int = 1000, tracked_k: int = 3, seed: int = 0,
                     true_class: int | None = None,
                     aug_cfg: AugConfig | None = None) -> UncertaintyReport:
    """Repeated stochastic forwards on one image under increasing input noise.

    Per sigma, each pass adds fresh Gaussian noise in normalized pixel space
    (clipped to the valid range) and runs the model in mc_dropout mode. The
    tracked classes are the true class (when known) plus the top runners-up
    ranked by mean probability at the lowest sigma.
    """
    sigmas = tuple(float(s) for s in noise_sigmas)
    if any(s < 0 for s in sigmas):
        raise InvalidSigma(f"noise sigmas must be >= 0, got {sigmas}")
    if n_passes < 1:
        raise ValueError(f"n_passes must be >= 1, got {n_passes}")
    cfg = aug_cfg or AugConfig()
    if true_class is None and isinstance(image, ImageSample):
        true_class = image.label
    base = eval_view(_pixels_of(image), cfg)
    if cfg.normalize:
        mean = np.asarray(cfg.mean, dtype=np.float32)
        std = np.asarray(cfg.std, dtype=np.float32)
        lo = (0.0 - mean) / std
        hi = (1.0 - mean) / std
    else:
        lo = np.zeros(3, dtype=np.float32)
        hi = np.ones(3, dtype=np.float32)

    all_probs = np.zeros((len(sigmas), n_passes, state.num_classes))
    predictions: list[list[tuple[int, float]]] = []
    for si, sigma in enumerate(sigmas):
        rows = []
        for pi in range(n_passes):
            if sigma > 0:
                noise = derive_rng(seed, "noise", si, pi).standard_normal(base.shape)
                x = np.clip(base + sigma * noise.astype(np.float32), lo, hi)
            else:
                x = base
            drop_rng = derive_rng(seed, "mc", si, pi)
            _, logits = M.forward(state, x[None], mode="mc_dropout", rng=drop_rng)
            probs = _softmax_row(logits[0].astype(np.float64))
            pred = int(probs.argmax())
            rows.append((pred, float(probs[pred])))
            all_probs[si, pi] = probs
        predictions.append(rows)

    ref = all_probs[int(np.argmin(sigmas))].mean(axis=0)
    order = [int(c) for c in np.argsort(-ref)]
    k = min(tracked_k, state.num_classes)
    if true_class is not None:
        tracked = [int(true_class)] + [c for c in order if c != true_class][:k - 1]
    else:
        tracked = order[:k]
    tracked_mean = all_probs[:, :, tracked].mean(axis=1)
    tracked_std = all_probs[:, :, tracked].std(axis=1)
    return UncertaintyReport(
        noise_levels=sigmas,
        n_passes=n_passes,
        predictions=predictions,
        tracked=tracked,
        tracked_mean=tracked_mean,
        tracked_std=tracked_std,
        true_class=true_class,
    )


# ------------------------------------------------------ activation diffs

@dataclass
class ActivationDiff:
    heatmap: np.ndarray        # input-size signed map, B minus A
    overlay: np.ndarray        # input-size RGB render in [0, 1]
    raw_diff: np.ndarray       # conv-map-size signed map


RED = np.array([0.85, 0.1, 0.05], dtype=np.float32)
BLUE = np.array([0.05, 0.2, 0.9], dtype=np.float32)


def render_signed_overlay(base: np.ndarray, heatmap: np.ndarray,
                          strength: float = 0.65) -> np.ndarray:
    """Blend a signed map over an RGB base: positive red, negative blue."""
    vmax = float(np.abs(heatmap).max())
    if vmax == 0:
        return base.copy()
    a = (np.abs(heatmap) / vmax)[:, :, None] * strength
    color = np.where((heatmap > 0)[:, :, None], RED, BLUE)
    return np.clip(base * (1 - a) + color * a, 0.0, 1.0).astype(np.float32)


def activation_diff(state_a: M.ModelState, state_b: M.ModelState, image,
                    aug_cfg: AugConfig | None = None) -> ActivationDiff:
    """Signed difference of final-layer activation maps, B minus A.

    Channel-mean aggregation, bilinear upsampling to the input size, and a
    red(+)/blue(-) overlay over the preprocessed image.
    """
    if state_a.spec != state_b.spec:
        raise SpecMismatch(
            f"backbones differ: {state_a.spec.to_dict()} vs {state_b.spec.to_dict()}"
        )
    cfg = aug_cfg or AugConfig()
    view = eval_view(_pixels_of(image), cfg)
    batch = view[None]
    _, map_a = M.forward_features_map(state_a, batch)
    _, map_b = M.forward_features_map(state_b, batch)
    raw = (map_b[0].mean(axis=0) - map_a[0].mean(axis=0)).astype(np.float32)
    side = cfg.output_side
    heat = resize_bilinear(raw[:, :, None], side, side)[:, :, 0]
    if cfg.normalize:
        mean = np.asarray(cfg.mean, dtype=np.float32)
        std = np.asarray(cfg.std, dtype=np.float32)
        base = np.clip(view * std + mean, 0.0, 1.0)
    else:
        base = np.clip(view, 0.0, 1.0)
    overlay = render_signed_overlay(base, heat)
    return ActivationDiff(heatmap=heat, overlay=overlay, raw_diff=raw)


def save_image(path, array: np.ndarray) -> None:
    """Write a float [0,1] HxWx3 (or HxW) array as PNG."""
    arr = np.asarray(array)
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(u8).save(path)


# ---------------------------------------------------------- curve report

def read_log(path) -> list[dict]:
    """Parse a training CSV; raises MalformedLog on schema violations."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in LOG_HEADER if c not in header]
        if missing:
            raise MalformedLog(f"{path}: missing columns {missing}")
        rows = []
        for raw in reader:
            try:
                row = {
                    "step": int(raw["step"]),
                    "lr_backbone": float(raw["lr_backbone"]),
                    "lr_classifier": float(raw["lr_classifier"]),
                    "loss_main": float(raw["loss_main"]),
                    "loss_dist": float(raw["loss_dist"]),
                    "loss_agg": float(raw["loss_agg"]),
                    "train_acc": float(raw["train_acc"]) if raw["train_acc"] else None,
                    "test_acc": float(raw["test_acc"]) if raw["test_acc"] else None,
                }
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedLog(f"{path}: bad row {raw!r}: {exc}") from exc
            rows.append(row)
    return rows


def _series(rows, key):
    xs = [r["step"] for r in rows if r[key] is not None]
    ys = [r[key] for r in rows if r[key] is not None]
    return xs, ys


def curve_report(log_paths, out_dir, labels=None) -> dict:
    """Loss/accuracy curves plus a final/best/gap summary for 1..n runs."""
    if isinstance(log_paths, (str, Path)):
        log_paths = [log_paths]
    paths = [Path(p) for p in log_paths]
    if labels is None:
        labels = [p.stem if len(paths) > 1 else "run" for p in paths]
    runs = [read_log(p) for p in paths]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for rows, label in zip(runs, labels):
        xs, ys = _series(rows, "loss_main")
        ax.plot(xs, ys, label=f"{label}: loss_main")
        xs, ys = _series(rows, "loss_dist")
        ax.plot(xs, ys, linestyle="--", label=f"{label}: loss_dist")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "losses_vs_step.png", dpi=110)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    any_acc = False
    for rows, label in zip(runs, labels):
        xs, ys = _series(rows, "test_acc")
        if xs:
            ax.plot(xs, ys, marker="o", label=f"{label}: test")
            any_acc = True
        xs, ys = _series(rows, "train_acc")
        if xs:
            ax.plot(xs, ys, marker=".", linestyle=":", label=f"{label}: train")
            any_acc = True
    ax.set_xlabel("step")
    ax.set_ylabel("accuracy (%)")
    if any_acc:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "accuracy_vs_step.png", dpi=110)
    plt.close(fig)

    summary = {}
    for rows, label in zip(runs, labels):
        _, test = _series(rows, "test_acc")
        _, train = _series(rows, "train_acc")
        final_test = test[-1] if test else None
        final_train = train[-1] if train else None
        gap = (final_train - final_test
               if final_train is not None and final_test is not None else None)
        summary[label] = {
            "final_test_acc": final_test,
            "best_test_acc": max(test) if test else None,
            "final_train_acc": final_train,
            "train_test_gap": gap,
            "final_loss_main": rows[-1]["loss_main"] if rows else None,
            "final_loss_dist": rows[-1]["loss_dist"] if rows else None,
            "steps": rows[-1]["step"] + 1 if rows else 0,
        }

    lines = ["run\tfinal_test\tbest_test\tfinal_train\tgap"]
    for label, s in summary.items():
        def f(x):
            return "-" if x is None else format(x, ".2f")
        lines.append(f"{label}\t{f(s['final_test_acc'])}\t{f(s['best_test_acc'])}"
                     f"\t{f(s['final_train_acc'])}\t{f(s['train_test_gap'])}")
    (out / "curve_summary.txt").write_text("\n".join(lines) + "\n")
    return summary
