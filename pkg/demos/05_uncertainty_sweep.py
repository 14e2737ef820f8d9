"""Monte Carlo dropout under growing input noise: repeated stochastic forward
passes on one image, tracking how the class probabilities spread.

Reuses the checkpoint from 04_train_tiny_run.py when present, otherwise
trains a quick throwaway model.
"""
from pathlib import Path

from adnet.augment import AugConfig
from adnet.data import load_dataset
from adnet.evalsuite import mc_dropout_sweep
from adnet.model import BackboneSpec, load_checkpoint
from adnet.objectives import LossConfig
from adnet.synth import SynthSpec, generate
from adnet.trainer import TrainConfig, fit

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

data_root = out / "dataset"
if not (data_root / "train").exists():
    generate(data_root, SynthSpec(num_classes=4, train_per_class=12,
                                  test_per_class=8, side=32), seed=5)
ckpt = out / "distilled" / "checkpoint_final.adnc"
aug = AugConfig(output_side=32)
if ckpt.exists():
    state, _ = load_checkpoint(ckpt)
    print("loaded", ckpt)
else:
    cfg = TrainConfig(steps_max=60, batch_size=8, d_aval=100.0,
                      scheduler_mode="none", loss=LossConfig(temperature=0.25),
                      aug=aug, backbone=BackboneSpec(widths=(8, 16, 32),
                                                     blocks=(1, 1, 1)))
    state, _ = fit(load_dataset(data_root, "train"), cfg)
    print("trained a quick 60-step model instead")

image = load_dataset(data_root, "test").load_image(0)
report = mc_dropout_sweep(state, image, noise_sigmas=(0.0, 0.05, 0.1, 0.2, 0.4),
                          n_passes=200, aug_cfg=aug)

print(f"true class {report.true_class}, tracked classes {report.tracked}")
print("sigma   mean prob (tracked)       std (tracked)")
for i, sigma in enumerate(report.noise_levels):
    mean = " ".join(f"{v:.3f}" for v in report.tracked_mean[i])
    std = " ".join(f"{v:.3f}" for v in report.tracked_std[i])
    print(f"{sigma:5.2f}   {mean}   {std}")

report.to_csv(out / "uncertainty.csv")
report.summary_to_csv(out / "uncertainty_summary.csv")
report.scatter_png(out / "uncertainty.png")
print("wrote", out / "uncertainty.png")
