"""The low-data fine-tuning loop.

SGD with momentum, a classifier learning rate raised by the available-data
ratio rule, halving-milestone LR drops, and per-step aggregation of the
classification and distillation objectives. All randomness flows from three
named seeds (data / model / augment) through purpose-partitioned streams, so
two runs with equal seeds produce byte-identical logs and checkpoints.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from .augment import AugConfig, make_triplet
from .data import Dataset
from .errors import (EmptyDataset, NonFiniteLoss, PercentOutOfRange,
                     StepsTooSmall)
from .objectives import (LossConfig, alpha_at, cross_entropy_and_grad,
                         distill_loss_and_grad)
from .rng import RngStream, derive_rng

SCHEDULER_MODES = ("literal_halving", "remaining_halving", "none")
BRANCH_MODES = ("double", "single")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.03
    momentum: float = 0.9
    batch_size: int = 24
    steps_max: int = 200
    d_aval: float = 100.0
    scheduler_mode: str = "literal_halving"
    seed_data: int = 0
    seed_model: int = 0
    seed_augment: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    backbone: M.BackboneSpec = field(default_factory=M.BackboneSpec)
    branches: str = "double"
    # vanilla: cross-entropy-only baseline; distillation branches never run
    vanilla: bool = False
    dropout_rate: float = 0.0
    eval_every: int = 0
    checkpoint_every: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not (0.0 < self.d_aval <= 100.0):
            raise PercentOutOfRange(f"d_aval must lie in (0, 100], got {self.d_aval}")
        if self.scheduler_mode not in SCHEDULER_MODES:
            raise ValueError(
                f"scheduler_mode must be one of {SCHEDULER_MODES}, got {self.scheduler_mode!r}"
            )
        if self.branches not in BRANCH_MODES:
            raise ValueError(f"branches must be one of {BRANCH_MODES}, got {self.branches!r}")
        if self.steps_max < 0:
            raise ValueError(f"steps_max must be >= 0, got {self.steps_max}")


@dataclass
class ScheduleState:
    milestones: tuple[int, ...]
    factor: float = 0.1
    drops_applied: int = 0

    def scale_at(self, step: int) -> float:
        crossed = sum(1 for m in self.milestones if m <= step)
        return self.factor ** crossed

    def advance_to(self, step: int) -> float:
        while (self.drops_applied < len(self.milestones)
               and self.milestones[self.drops_applied] <= step):
            self.drops_applied += 1
        return self.factor ** self.drops_applied


@dataclass
class TrainLogRecord:
    step: int
    lr_backbone: float
    lr_classifier: float
    loss_main: float
    loss_dist: float
    loss_agg: float
    train_acc: float | None = None
    test_acc: float | None = None


LOG_HEADER = ("step", "lr_backbone", "lr_classifier", "loss_main",
              "loss_dist", "loss_agg", "train_acc", "test_acc")


class TrainLog:
    """In-memory training log with the CSV artifact format."""

    def __init__(self, records: list[TrainLogRecord] | None = None, path=None):
        self.records = records if records is not None else []
        self.path = path

    def append(self, record: TrainLogRecord) -> None:
        self.records.append(record)

    @staticmethod
    def _fmt(x) -> str:
        return "" if x is None else format(float(x), ".10g")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_HEADER)
            for r in self.records:
                writer.writerow([
                    r.step,
                    self._fmt(r.lr_backbone), self._fmt(r.lr_classifier),
                    self._fmt(r.loss_main), self._fmt(r.loss_dist),
                    self._fmt(r.loss_agg),
                    self._fmt(r.train_acc), self._fmt(r.test_acc),
                ])
        self.path = path


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def classifier_lr_ratio(d_aval: float) -> float:
    """Head LR multiplier: (100 / d_aval) doubled, rounded, halved.

    Quantizes the inverse-availability ratio to the nearest half.
    """
    if not (0.0 < d_aval <= 100.0):
        raise PercentOutOfRange(f"d_aval must lie in (0, 100], got {d_aval}")
    return _round_half_up((100.0 / d_aval) * 2.0) / 2.0


def build_schedule(steps_max: int, mode: str = "literal_halving") -> ScheduleState:
    """Milestones at which both LRs drop by the 0.1 factor.

    literal_halving places them at steps_max * 0.5^i (i = 1..5), which front-
    loads every drop into the first half of the budget; remaining_halving
    places them at steps_max * (1 - 0.5^i), the usual late-drop reading.
    """
    if mode not in SCHEDULER_MODES:
        raise ValueError(f"mode must be one of {SCHEDULER_MODES}, got {mode!r}")
    if mode == "none":
        return ScheduleState(milestones=())
    if steps_max < 32:
        raise StepsTooSmall(f"steps_max must be >= 32 for {mode}, got {steps_max}")
    raw = []
    for i in range(1, 6):
        half = steps_max * 0.5 ** i
        raw.append(half if mode == "literal_halving" else steps_max - half)
    steps = sorted({_round_half_up(v) for v in raw})
    return ScheduleState(milestones=tuple(s for s in steps if 0 < s < steps_max))


class MomentumSGD:
    """v <- mu*v + g; theta <- theta - lr*v, with a separate head LR."""

    def __init__(self, params: dict[str, np.ndarray], momentum: float = 0.9):
        self.momentum = float(momentum)
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_backbone: float, lr_classifier: float) -> None:
        for name, g in grads.items():
            v = self.velocity[name]
            v *= self.momentum
            v += g
            lr = lr_classifier if name.startswith("head.") else lr_backbone
            params[name] -= lr * v


def _clip_grads(grads: dict[str, np.ndarray], threshold: float) -> None:
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                          for g in grads.values()))
    if total > threshold and total > 0:
        scale = threshold / total
        for g in grads.values():
            g *= scale


def _stack_views(triplets, attr: str, dtype) -> np.ndarray:
    batch = np.stack([getattr(t, attr) for t in triplets])
    return np.ascontiguousarray(batch.transpose(0, 3, 1, 2), dtype=dtype)


def compute_losses_and_grads(state: M.ModelState, triplets, labels,
                             cfg: TrainConfig, alpha: float,
                             drop_rng: np.random.Generator | None = None):
    """Forward every active branch and backprop the aggregated loss.

    Returns (loss_main, loss_dist, grads). The classification view always
    runs; the distillation branches run only when alpha is nonzero, so an
    alpha=0 call is arithmetically and RNG-wise the vanilla baseline.
    """
    labels = np.asarray(labels)
    distill_on = alpha > 0.0

    dtype = state.dtype
    x_cls = _stack_views(triplets, "cls_view", dtype)
    feat_cls, _, cache_cls = M.backbone_forward(state, x_cls, want_cache=True)
    logits, head_cache = M.head_forward(state, feat_cls, "train", drop_rng)

    loss_main, dlogits = cross_entropy_and_grad(logits, labels)
    grads = M.zero_grads(state)
    dfeat_cls = M.head_backward(state, head_cache, dlogits, grads)

    loss_dist = 0.0
    if distill_on:
        if cfg.branches == "double":
            x_t = _stack_views(triplets, "target_view", dtype)
            feat_t, _, cache_t = M.backbone_forward(state, x_t, want_cache=True)
        else:
            feat_t, cache_t = feat_cls, None  # distill against the cls view
        x_s = _stack_views(triplets, "source_view", dtype)
        feat_s, _, cache_s = M.backbone_forward(state, x_s, want_cache=True)
        pairs = [(feat_s, cache_s)]
        n_extra = len(triplets[0].extra_views)
        for v in range(n_extra):
            batch_v = np.stack([t.extra_views[v] for t in triplets])
            x_v = np.ascontiguousarray(batch_v.transpose(0, 3, 1, 2), dtype=dtype)
            f_v, _, c_v = M.backbone_forward(state, x_v, want_cache=True)
            pairs.append((f_v, c_v))

        head = (state.params["head.w"], state.params["head.b"])
        n_pairs = len(pairs)
        dfeat_t_total = np.zeros_like(feat_t)
        for feat_p, cache_p in pairs:
            term, dt, ds, dw, db = distill_loss_and_grad(
                cfg.loss.dist_kind, feat_t, feat_p, labels, cfg.loss, head)
            loss_dist += term / n_pairs
            dfeat_t_total += dt / n_pairs
            M.backbone_backward(state, cache_p, (alpha / n_pairs) * ds, grads)
            if dw is not None:
                grads["head.w"] += (alpha / n_pairs) * dw
                grads["head.b"] += (alpha / n_pairs) * db
        if cfg.branches == "double":
            M.backbone_backward(state, cache_t, alpha * dfeat_t_total, grads)
        else:
            dfeat_cls = dfeat_cls + alpha * dfeat_t_total

    M.backbone_backward(state, cache_cls, dfeat_cls, grads)
    return loss_main, loss_dist, grads


def train_step(state: M.ModelState, optimizer: MomentumSGD, triplets, labels,
               cfg: TrainConfig, step: int,
               schedule: ScheduleState | None = None) -> TrainLogRecord:
    """One optimizer update over a ViewTriplet batch."""
    scale = schedule.advance_to(step) if schedule is not None else 1.0
    lr_backbone = cfg.lr * scale
    ratio = classifier_lr_ratio(cfg.d_aval)
    lr_classifier = lr_backbone * ratio
    alpha = 0.0 if cfg.vanilla else alpha_at(cfg.loss, step, cfg.steps_max)

    drop_rng = derive_rng(cfg.seed_model, "dropout", step)
    loss_main, loss_dist, grads = compute_losses_and_grads(
        state, triplets, labels, cfg, alpha, drop_rng)

    loss_agg = loss_main + alpha * loss_dist
    if not (np.isfinite(loss_main) and np.isfinite(loss_dist) and np.isfinite(loss_agg)):
        raise NonFiniteLoss(
            f"step {step}: loss_main={loss_main} loss_dist={loss_dist} "
            f"loss_agg={loss_agg}"
        )

    if cfg.grad_clip is not None:
        _clip_grads(grads, cfg.grad_clip)
    optimizer.step(state.params, grads, lr_backbone, lr_classifier)

    return TrainLogRecord(
        step=step,
        lr_backbone=lr_backbone,
        lr_classifier=lr_classifier,
        loss_main=loss_main,
        loss_dist=loss_dist,
        loss_agg=loss_agg,
    )


class _EpochSampler:
    """Batch indices from seeded per-epoch shuffles; batches never straddle epochs."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = -1
        self.buffer: list[int] = []

    def next_batch(self) -> list[int]:
        if not self.buffer:
            self.epoch += 1
            gen = derive_rng(self.seed, "shuffle", self.epoch)
            self.buffer = list(gen.permutation(self.n))
        batch = self.buffer[:self.batch_size]
        self.buffer = self.buffer[len(batch):]
        return batch


def fit(dataset: Dataset, cfg: TrainConfig, test_dataset: Dataset | None = None,
        out_dir=None, state: M.ModelState | None = None):
    """Train for cfg.steps_max steps; returns (final state, TrainLog).

    With ``out_dir`` set, writes the CSV log, periodic + final checkpoints,
    and a run_meta.json sidecar (the only artifact carrying timestamps).
    """
    if len(dataset) == 0:
        raise EmptyDataset("fit needs a non-empty dataset")
    from .evalsuite import accuracy  # local import keeps module load light

    started = time.time()
    if state is None:
        state = M.init_model(cfg.backbone, dataset.num_classes, cfg.seed_model,
                             dropout_rate=cfg.dropout_rate)
    log = TrainLog()
    out = None
    if out_dir is not None:
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

    if cfg.steps_max > 0:
        schedule = build_schedule(cfg.steps_max, cfg.scheduler_mode)
        optimizer = MomentumSGD(state.params, cfg.momentum)
        images = dataset.load_images()
        sampler = _EpochSampler(len(dataset), cfg.batch_size, cfg.seed_data)
        for step in range(cfg.steps_max):
            batch = sampler.next_batch()
            triplets = [
                make_triplet(images[i], cfg.aug,
                             RngStream(cfg.seed_augment, "view", step, slot))
                for slot, i in enumerate(batch)
            ]
            labels = [images[i].label for i in batch]
            record = train_step(state, optimizer, triplets, labels, cfg, step,
                                schedule)
            last = step == cfg.steps_max - 1
            if cfg.eval_every > 0 and ((step + 1) % cfg.eval_every == 0 or last):
                record.train_acc = accuracy(state, dataset, cfg.aug)
                if test_dataset is not None:
                    record.test_acc = accuracy(state, test_dataset, cfg.aug)
            log.append(record)
            if (out is not None and cfg.checkpoint_every > 0
                    and (step + 1) % cfg.checkpoint_every == 0 and not last):
                M.save_checkpoint(state, out / f"checkpoint_{step + 1:06d}.adnc",
                                  step=step + 1)

    if out is not None:
        log.to_csv(out / "train_log.csv")
        ckpt_meta = {
            "output_side": cfg.aug.output_side,
            "normalize_mean": list(cfg.aug.mean),
            "normalize_std": list(cfg.aug.std),
        }
        M.save_checkpoint(state, out / "checkpoint_final.adnc",
                          step=cfg.steps_max, extra_meta=ckpt_meta)
        meta = {
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
            "duration_sec": round(time.time() - started, 3),
            "steps_max": cfg.steps_max,
            "seeds": {"data": cfg.seed_data, "model": cfg.seed_model,
                      "augment": cfg.seed_augment},
            "lr": cfg.lr,
            "d_aval": cfg.d_aval,
            "classifier_lr_ratio": classifier_lr_ratio(cfg.d_aval),
            "scheduler_mode": cfg.scheduler_mode,
            "branches": cfg.branches,
            "vanilla": cfg.vanilla,
            "alpha": cfg.loss.alpha,
            "alpha_decay": cfg.loss.alpha_decay,
            "dist_kind": cfg.loss.dist_kind,
            "advanced_aug": cfg.aug.advanced,
            "num_train_samples": len(dataset),
        }
        with open(out / "run_meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    return state, log


def vanilla_config(cfg: TrainConfig) -> TrainConfig:
    """The cross-entropy-only counterpart of a config (shared seeds/budget)."""
    return replace(cfg, vanilla=True)
