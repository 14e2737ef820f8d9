"""Walk through the three-view augmentation: one classification view plus a
large target crop and a small source crop of the same image, then check the
crop-area statistics over many draws.
"""
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from adnet.augment import AugConfig, make_triplet, sample_crop
from adnet.data import ImageSample
from adnet.rng import RngStream

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

# a synthetic "image": smooth gradients with a bright local patch, so the
# crops are visually distinguishable
side = 96
yy, xx = np.mgrid[0:side, 0:side] / side
pixels = np.stack([0.3 + 0.4 * xx, 0.3 + 0.4 * yy, 0.5 * np.ones_like(xx)], axis=2)
pixels[60:80, 15:35] = (0.9, 0.8, 0.2)
image = ImageSample(pixels=pixels.astype(np.float32), label=0)

cfg = AugConfig(output_side=64, normalize=False, color_jitter=False)
trip = make_triplet(image, cfg, RngStream(0, "view", 0))

print("target crop:", trip.target_crop, f"-> area fraction {trip.target_crop.area_fraction:.3f}")
print("source crop:", trip.source_crop, f"-> area fraction {trip.source_crop.area_fraction:.3f}")

fig, axes = plt.subplots(1, 4, figsize=(11, 3))
axes[0].imshow(pixels)
axes[0].set_title("input")
for ax, view, name in zip(axes[1:], (trip.cls_view, trip.target_view, trip.source_view),
                          ("classification view", "target crop", "source crop")):
    ax.imshow(np.clip(view, 0, 1))
    ax.set_title(name)
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "views.png", dpi=110)
print("wrote", out / "views.png")

# area fractions over 10k draws: uniform within each configured range
gen = np.random.default_rng(1)
target = [sample_crop((512, 512), (0.65, 0.85), (1.0, 1.0), gen).area_fraction
          for _ in range(10000)]
source = [sample_crop((512, 512), (0.01, 0.65), (1.0, 1.0), gen).area_fraction
          for _ in range(10000)]

fig, ax = plt.subplots(figsize=(7, 3.5))
ax.hist(source, bins=60, alpha=0.7, label="source area fraction")
ax.hist(target, bins=60, alpha=0.7, label="target area fraction")
ax.set_xlabel("area fraction")
ax.legend()
fig.tight_layout()
fig.savefig(out / "crop_fractions.png", dpi=110)
print("wrote", out / "crop_fractions.png")
print(f"target range observed: [{min(target):.3f}, {max(target):.3f}]")
print(f"source range observed: [{min(source):.3f}, {max(source):.3f}]")
