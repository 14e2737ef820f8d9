"""Release gate: twelve end-to-end checks, one test per numbered criterion.

Each test prints a single `criterion NN PASS/FAIL` line with the measured
values (visible under `pytest -s`; the per-test PASSED/FAILED line of
`pytest -v` carries the same verdict). Criterion 8 trains 3 seeds x 2 arms
on a generated fine-grained dataset and dominates the suite's runtime.
"""
import csv
import dataclasses
import hashlib
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from conftest import TINY_SPEC, fake_triplet

from adnet import model as M
from adnet.augment import AugConfig, sample_crop
from adnet.cli import main as cli_main
from adnet.data import load_dataset, materialize, sample_subset
from adnet.evalsuite import (accuracy, activation_diff, curve_report,
                             mc_dropout_sweep, read_log, render_signed_overlay,
                             save_image)
from adnet.model import BackboneSpec, init_model
from adnet.objectives import LossConfig, cross_entropy, kl_feature_distill
from adnet.synth import SynthSpec, generate
from adnet.trainer import (TrainConfig, build_schedule, classifier_lr_ratio,
                           compute_losses_and_grads, fit)

AUG16 = AugConfig(output_side=16, cls_area=(0.5, 1.0))


def _report(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num:02d} {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    assert ok, f"criterion {num:02d}: {detail}"


def _tiny_train_config(**kw) -> TrainConfig:
    base = dict(steps_max=6, batch_size=4, lr=0.03, d_aval=100.0,
                scheduler_mode="none", aug=AUG16, backbone=TINY_SPEC)
    base.update(kw)
    return TrainConfig(**base)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_c01_classifier_lr_rule_exact():
    table = {10.0: 10.0, 15.0: 6.5, 30.0: 3.5, 50.0: 2.0, 100.0: 1.0}
    got = {d: classifier_lr_ratio(d) for d in table}
    ok = all(got[d] == want for d, want in table.items())
    _report(1, ok, f"ratios {sorted(got.items())}")


def test_c02_loss_identities():
    cfg = LossConfig()
    gen = np.random.default_rng(2)
    f = gen.standard_normal((16, 12))
    self_kl = kl_feature_distill(f, f, cfg)

    worst = math.inf
    for _ in range(10000):
        t = gen.standard_normal((1, 8)) * gen.uniform(0.1, 10.0)
        s = gen.standard_normal((1, 8)) * gen.uniform(0.1, 10.0)
        worst = min(worst, kl_feature_distill(t, s, cfg))

    # softmax([0,0]) = [1/2,1/2] vs softmax([0,ln3]) = [1/4,3/4]
    hand = kl_feature_distill(np.array([[0.0, 0.0]]),
                              np.array([[0.0, math.log(3.0)]]), cfg)
    hand_err = abs(hand - 0.143841)

    uni_err = abs(cross_entropy(np.zeros((8, 5)), np.arange(8) % 5) - math.log(5))

    ok = (abs(self_kl) <= 1e-9 and worst >= -1e-9
          and hand_err <= 1e-5 and uni_err <= 1e-9)
    _report(2, ok, f"self-KL {self_kl:.2e}, min pair KL {worst:.2e}, "
                   f"hand err {hand_err:.2e}, uniform-CE err {uni_err:.2e}")


def test_c03_gradient_oracle_full_loss():
    spec = BackboneSpec(widths=(4,), blocks=(1,), gn_groups=2)
    state = init_model(spec, 3, seed=3, dropout_rate=0.0, dtype=np.float64)
    assert state.num_params() <= 1000
    gen = np.random.default_rng(5)
    trips = [fake_triplet(gen, side=12) for _ in range(2)]
    labels = np.array([0, 2])
    eps = 1e-5

    worst = 0.0
    for kind in ("kl", "l1", "l2", "ce_logits", "focal_logits"):
        for alpha in (0.0, 0.1, 1.0):
            cfg = _tiny_train_config(
                loss=LossConfig(dist_kind=kind, alpha=alpha), backbone=spec)

            def agg() -> float:
                lm, ld, _ = compute_losses_and_grads(
                    state, trips, labels, cfg, alpha, None)
                return lm + alpha * ld

            _, _, grads = compute_losses_and_grads(
                state, trips, labels, cfg, alpha, None)
            analytic, fd = [], []
            for name, p in state.params.items():
                flat = p.reshape(-1)
                g = grads[name].reshape(-1)
                for i in range(flat.size):
                    keep = flat[i]
                    flat[i] = keep + eps
                    up = agg()
                    flat[i] = keep - eps
                    down = agg()
                    flat[i] = keep
                    fd.append((up - down) / (2 * eps))
                    analytic.append(g[i])
            an = np.array(analytic)
            fdv = np.array(fd)
            rel = np.linalg.norm(fdv - an) / max(np.linalg.norm(an),
                                                 np.linalg.norm(fdv))
            worst = max(worst, rel)
    ok = worst < 1e-4
    _report(3, ok, f"{state.num_params()} params, worst grad rel err {worst:.2e} "
                   f"over 5 losses x 3 alphas")


def test_c04_vanilla_equivalence_200_steps(synth_root, tmp_path):
    names = ["checkpoint_000040.adnc", "checkpoint_000080.adnc",
             "checkpoint_000120.adnc", "checkpoint_000160.adnc",
             "checkpoint_final.adnc"]
    hashes = {}
    train = load_dataset(synth_root, "train")
    for label, kw in (("alpha0", dict(loss=LossConfig(alpha=0.0))),
                      ("vanilla", dict(vanilla=True))):
        cfg = _tiny_train_config(steps_max=200, checkpoint_every=40, **kw)
        out = tmp_path / label
        fit(train, cfg, out_dir=out)
        hashes[label] = [_sha(out / n) for n in names]
    ok = hashes["alpha0"] == hashes["vanilla"]
    _report(4, ok, f"5 checkpoint hashes over 200 steps "
                   f"{'all equal' if ok else 'DIFFER'} "
                   f"(final {hashes['alpha0'][-1][:12]})")


def test_c05_crop_bounds_and_uniformity():
    gen = np.random.default_rng(55)
    ranges = {"target": (0.65, 0.85), "source": (0.01, 0.65)}
    detail, ok = [], True
    for name, (lo, hi) in ranges.items():
        fracs = np.array([
            sample_crop((2048, 2048), (lo, hi), (0.75, 4 / 3), gen).area_fraction
            for _ in range(10000)
        ])
        in_bounds = bool((fracs >= lo - 1e-12).all() and (fracs <= hi + 1e-12).all())
        # Uniformity is a property of the area draw. Under varied aspect the
        # realized fraction on a square image is reshaped by feasibility
        # (large area x extreme aspect falls back to a centered crop), so the
        # KS check runs at unit aspect where realized == drawn up to rounding.
        uni = np.array([
            sample_crop((2048, 2048), (lo, hi), (1.0, 1.0), gen).area_fraction
            for _ in range(10000)
        ])
        _, pvalue = stats.kstest(uni, "uniform", args=(lo, hi - lo))
        ok = ok and in_bounds and pvalue > 0.01
        detail.append(f"{name} [{fracs.min():.4f},{fracs.max():.4f}] KS p={pvalue:.3f}")
    _report(5, ok, "; ".join(detail))


def test_c06_scheduler_exactness(synth_root):
    sched = build_schedule(3200, "literal_halving")
    milestones_ok = sched.milestones == (100, 200, 400, 800, 1600)
    drops_ok = all(sched.scale_at(m) == pytest.approx(0.1 * sched.scale_at(m - 1),
                                                      rel=1e-12)
                   for m in sched.milestones)
    final_lr = 0.03 * sched.scale_at(3199)
    final_ok = final_lr == pytest.approx(0.03e-5, rel=1e-9)

    # ratio invariant on a live run: every logged step keeps the multiplier
    cfg = _tiny_train_config(steps_max=32, d_aval=15.0,
                             scheduler_mode="literal_halving")
    _, log = fit(load_dataset(synth_root, "train"), cfg)
    ratio_ok = all(r.lr_classifier == r.lr_backbone * 6.5 for r in log.records)

    ok = milestones_ok and drops_ok and final_ok and ratio_ok
    _report(6, ok, f"milestones {sched.milestones}, final lr {final_lr:.3e}, "
                   f"ratio 6.5 held on {len(log.records)} logged steps")


def test_c07_two_runs_bitwise_identical(synth_root, tmp_path):
    train = load_dataset(synth_root, "train")
    test = load_dataset(synth_root, "test")
    cfg = _tiny_train_config(steps_max=25, eval_every=10,
                             loss=LossConfig(alpha=0.1, dist_kind="kl"))
    digests = []
    for label in ("one", "two"):
        out = tmp_path / label
        fit(train, cfg, test_dataset=test, out_dir=out)
        digests.append((_sha(out / "checkpoint_final.adnc"),
                        _sha(out / "train_log.csv")))
    ok = digests[0] == digests[1]
    _report(7, ok, f"checkpoint {digests[0][0][:12]} and CSV {digests[0][1][:12]} "
                   f"{'reproduced exactly' if ok else 'DIFFER'}")


@pytest.fixture(scope="module")
def finegrained_root(tmp_path_factory):
    """8 classes that differ only in a small local motif; 48 px, noisy."""
    root = tmp_path_factory.mktemp("fgsynth")
    spec = SynthSpec(num_classes=8, train_per_class=100, test_per_class=50,
                     side=48, motif_side=20, motif_contrast=0.6,
                     noise=0.05, background_blobs=3, distractors=1)
    generate(root, spec, seed=11)
    return root


def test_c08_method_effect_three_seeds(finegrained_root):
    train_full = load_dataset(finegrained_root, "train")
    test = load_dataset(finegrained_root, "test")
    base = TrainConfig(
        steps_max=500, batch_size=16, d_aval=10.0, scheduler_mode="none",
        loss=LossConfig(alpha=0.1, dist_kind="kl", temperature=0.25),
        aug=AugConfig(output_side=48),
        backbone=BackboneSpec(widths=(12, 24, 48), blocks=(1, 1, 1)),
    )
    acc, gap = {"adnet": [], "vanilla": []}, {"adnet": [], "vanilla": []}
    for seed in (0, 1, 2):
        subset = materialize(train_full, sample_subset(train_full, 10.0, seed))
        for vanilla in (False, True):
            cfg = dataclasses.replace(base, vanilla=vanilla, seed_data=seed,
                                      seed_model=seed, seed_augment=seed)
            state, _ = fit(subset, cfg)
            tr = accuracy(state, subset, cfg.aug)
            te = accuracy(state, test, cfg.aug)
            arm = "vanilla" if vanilla else "adnet"
            acc[arm].append(te)
            gap[arm].append(tr - te)
    mean = lambda xs: sum(xs) / len(xs)
    te_a, te_v = mean(acc["adnet"]), mean(acc["vanilla"])
    gap_a, gap_v = mean(gap["adnet"]), mean(gap["vanilla"])
    ok = te_a > te_v and gap_a < gap_v
    _report(8, ok, f"mean test acc {te_a:.2f} vs vanilla {te_v:.2f}; "
                   f"mean train-test gap {gap_a:.2f} vs {gap_v:.2f} (3 seeds)")


def test_c09_loss_curve_artifact(synth_root, tmp_path):
    cfg = _tiny_train_config(loss=LossConfig(alpha=0.1, dist_kind="kl"))
    fit(load_dataset(synth_root, "train"), cfg, out_dir=tmp_path)
    rows = read_log(tmp_path / "train_log.csv")
    per_step = all(isinstance(r["loss_main"], float)
                   and isinstance(r["loss_dist"], float) for r in rows)
    curves = curve_report([tmp_path / "train_log.csv"], tmp_path / "curves")
    png = tmp_path / "curves" / "losses_vs_step.png"
    rendered = png.exists() and png.stat().st_size > 1000
    ok = per_step and len(rows) == 6 and rendered and "run" in curves
    _report(9, ok, f"{len(rows)} rows with loss_main+loss_dist, "
                   f"losses_vs_step.png {png.stat().st_size} bytes")


def test_c10_mc_dropout_contract(synth_root, tmp_path):
    img = load_dataset(synth_root, "test").load_image(0)

    still = init_model(TINY_SPEC, 3, seed=0, dropout_rate=0.0)
    rep = mc_dropout_sweep(still, img, noise_sigmas=(0.0,), n_passes=1000,
                           aug_cfg=AUG16)
    unique = len(set(rep.predictions[0]))

    drop = init_model(TINY_SPEC, 3, seed=0, dropout_rate=0.3)
    rep_drop = mc_dropout_sweep(drop, img, noise_sigmas=(0.0,), n_passes=200,
                                aug_cfg=AUG16)
    tracked_var = float(rep_drop.tracked_std[0, 0]) ** 2

    rep_grid = mc_dropout_sweep(drop, img, noise_sigmas=(0.0, 0.1, 0.2),
                                n_passes=40, aug_cfg=AUG16)
    rep_grid.to_csv(tmp_path / "u.csv")
    n_rows = sum(1 for _ in open(tmp_path / "u.csv")) - 1

    ok = unique == 1 and tracked_var > 0 and n_rows == 40 * 3
    _report(10, ok, f"{unique} distinct prediction(s) over 1000 still passes; "
                    f"tracked-class var {tracked_var:.2e} at rate 0.3; "
                    f"{n_rows} CSV rows for 40 passes x 3 sigmas")


def test_c11_activation_diff_contract(synth_root, tmp_path):
    img = load_dataset(synth_root, "test").load_image(1)
    a = init_model(TINY_SPEC, 3, seed=0, dropout_rate=0.0)
    b = init_model(TINY_SPEC, 3, seed=1, dropout_rate=0.0)

    d_aa = activation_diff(a, a, img, AUG16)
    zero_ok = not d_aa.heatmap.any()
    d_ab = activation_diff(a, b, img, AUG16)
    d_ba = activation_diff(b, a, img, AUG16)
    anti_ok = np.array_equal(d_ab.heatmap, -d_ba.heatmap)

    heat = np.zeros((16, 16), dtype=np.float32)
    heat[2, 2], heat[10, 10] = 1.0, -1.0
    base = np.full((16, 16, 3), 0.5, dtype=np.float32)
    over = render_signed_overlay(base, heat)
    sign_ok = over[2, 2, 0] > over[2, 2, 2] and over[10, 10, 2] > over[10, 10, 0]
    save_image(tmp_path / "overlay.png", over)

    ok = zero_ok and anti_ok and sign_ok and (tmp_path / "overlay.png").exists()
    _report(11, ok, f"self-diff max {np.abs(d_aa.heatmap).max()}, antisymmetry "
                    f"{'exact' if anti_ok else 'BROKEN'}, +red/-blue {sign_ok}")


def test_c12_ablation_harness(synth_root, tmp_path):
    code = cli_main([
        "ablate", "--data", str(synth_root), "--out", str(tmp_path),
        "--steps", "40", "--batch-size", "8", "--schedule", "none",
        "--widths", "8,16", "--blocks", "1,1", "--output-side", "16",
        "--dists", "kl,l1,l2,ce,focal", "--alphas", "0.1",
        "--branch-modes", "single,double",
    ])
    rows = list(csv.reader(open(tmp_path / "ablation.csv")))
    header_ok = rows[0] == ["config_hash", "dist_kind", "alpha", "branches",
                            "advanced_aug", "final_acc", "best_acc", "status"]
    cells = rows[1:]
    well_formed = (len(cells) == 10
                   and all(r[7] == "ok" and 0.0 <= float(r[5]) <= 100.0
                           and 0.0 <= float(r[6]) <= 100.0 for r in cells))
    ranked = sorted(cells, key=lambda r: -float(r[5]))
    rank = next(i for i, r in enumerate(ranked, 1)
                if r[1] == "kl" and r[3] == "double")
    ok = code == 0 and header_ok and well_formed
    _report(12, ok, f"10/10 cells ok; kl+double ranked {rank} of 10 by final "
                    f"acc (expected first at scale, not asserted)")
