"""Where do two models look? Signed difference of final-layer activation maps
on the same image, rendered red (model B higher) / blue (model A higher).

Compares the distilled and vanilla checkpoints from 04_train_tiny_run.py when
both exist, otherwise two fresh random initializations.
"""
from pathlib import Path

import numpy as np

from adnet.augment import AugConfig
from adnet.data import load_dataset
from adnet.evalsuite import activation_diff, save_image
from adnet.model import BackboneSpec, init_model, load_checkpoint
from adnet.synth import SynthSpec, generate

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

data_root = out / "dataset"
if not (data_root / "train").exists():
    generate(data_root, SynthSpec(num_classes=4, train_per_class=12,
                                  test_per_class=8, side=32), seed=5)

ckpt_a = out / "vanilla" / "checkpoint_final.adnc"
ckpt_b = out / "distilled" / "checkpoint_final.adnc"
if ckpt_a.exists() and ckpt_b.exists():
    state_a, _ = load_checkpoint(ckpt_a)
    state_b, _ = load_checkpoint(ckpt_b)
    print("comparing vanilla (blue) vs distilled (red) checkpoints")
else:
    spec = BackboneSpec(widths=(8, 16, 32), blocks=(1, 1, 1))
    state_a = init_model(spec, 4, seed=0)
    state_b = init_model(spec, 4, seed=1)
    print("checkpoints not found; comparing two random initializations")

aug = AugConfig(output_side=32)
image = load_dataset(data_root, "test").load_image(0)
diff = activation_diff(state_a, state_b, image, aug)

print(f"raw activation diff {diff.raw_diff.shape}, "
      f"range [{diff.raw_diff.min():+.4f}, {diff.raw_diff.max():+.4f}]")
print(f"max |heatmap| = {np.abs(diff.heatmap).max():.6g}")

save_image(out / "actdiff_overlay.png", diff.overlay)
norm = np.abs(diff.heatmap).max() or 1.0
save_image(out / "actdiff_heatmap.png", 0.5 + 0.5 * diff.heatmap / norm)
print("wrote", out / "actdiff_overlay.png")
print("wrote", out / "actdiff_heatmap.png")

# sanity: the comparison is antisymmetric
back = activation_diff(state_b, state_a, image, aug)
assert np.array_equal(back.heatmap, -diff.heatmap)
print("diff(B, A) == -diff(A, B) holds exactly")
