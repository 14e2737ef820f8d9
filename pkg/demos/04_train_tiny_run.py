"""Train the double-branch distillation recipe against a plain cross-entropy
baseline on a small generated dataset, then plot both loss curves.

Takes about a minute on CPU. The checkpoints land in demos/output/ and feed
the uncertainty and activation-map demos. At this miniature scale a single
seed is noisy; the calibrated 3-seed comparison lives in the acceptance test.
"""
import dataclasses
from pathlib import Path

from adnet.augment import AugConfig
from adnet.data import load_dataset
from adnet.evalsuite import accuracy, curve_report
from adnet.model import BackboneSpec
from adnet.objectives import LossConfig
from adnet.synth import SynthSpec, generate
from adnet.trainer import TrainConfig, fit

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

# 4 classes that differ only in a small local pattern
data_root = out / "dataset"
if not (data_root / "train").exists():
    generate(data_root, SynthSpec(num_classes=4, train_per_class=12,
                                  test_per_class=8, side=32), seed=5)
train = load_dataset(data_root, "train")
test = load_dataset(data_root, "test")
print(f"dataset: {len(train)} train / {len(test)} test images, "
      f"{train.num_classes} classes")

base = TrainConfig(
    steps_max=150, batch_size=8, lr=0.03, d_aval=100.0, scheduler_mode="none",
    eval_every=25,
    loss=LossConfig(alpha=0.1, dist_kind="kl", temperature=0.25),
    aug=AugConfig(output_side=32),
    backbone=BackboneSpec(widths=(8, 16, 32), blocks=(1, 1, 1)),
)

logs = {}
for name in ("distilled", "vanilla"):
    cfg = dataclasses.replace(base, vanilla=(name == "vanilla"))
    state, log = fit(train, cfg, test_dataset=test, out_dir=out / name)
    logs[name] = out / name / "train_log.csv"
    tr, te = accuracy(state, train, cfg.aug), accuracy(state, test, cfg.aug)
    print(f"{name:10s} train acc {tr:5.1f}   test acc {te:5.1f}   gap {tr - te:5.1f}")

summary = curve_report(list(logs.values()), out / "curves", labels=list(logs))
print("wrote", out / "curves" / "losses_vs_step.png")
print("wrote", out / "curves" / "accuracy_vs_step.png")
