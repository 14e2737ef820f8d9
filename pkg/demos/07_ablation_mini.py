"""Drive the ablation harness over a small grid through the CLI entry point
and print the ranked table.
"""
import csv
from pathlib import Path

from adnet.cli import main
from adnet.synth import SynthSpec, generate

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

data_root = out / "dataset"
if not (data_root / "train").exists():
    generate(data_root, SynthSpec(num_classes=4, train_per_class=12,
                                  test_per_class=8, side=32), seed=5)

grid_dir = out / "ablation"
code = main([
    "ablate", "--data", str(data_root), "--out", str(grid_dir),
    "--steps", "150", "--batch-size", "8", "--schedule", "none",
    "--widths", "8,16,32", "--blocks", "1,1,1", "--output-side", "32",
    "--dists", "kl,l2", "--alphas", "0.1",
    "--branch-modes", "single,double", "--include-vanilla",
])
assert code == 0

with open(grid_dir / "ablation.csv") as fh:
    rows = list(csv.DictReader(fh))
rows.sort(key=lambda r: -float(r["final_acc"]))
print(f"\n{'dist':8s} {'alpha':>6s} {'branches':>8s} {'final':>7s} {'best':>7s}")
for r in rows:
    print(f"{r['dist_kind']:8s} {r['alpha']:>6s} {r['branches']:>8s} "
          f"{float(r['final_acc']):7.2f} {float(r['best_acc']):7.2f}")
