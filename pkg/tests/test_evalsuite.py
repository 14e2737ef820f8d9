import csv
import dataclasses

import numpy as np
import pytest
from PIL import Image

from adnet.augment import AugConfig
from adnet.data import Dataset, ImageSample, load_dataset
from adnet.errors import EmptyDataset, InvalidSigma, MalformedLog, SpecMismatch
from adnet.evalsuite import (ActivationDiff, UncertaintyReport, accuracy,
                             activation_diff, curve_report, eval_view,
                             mc_dropout_sweep, read_log,
                             render_signed_overlay, save_image)
from adnet.model import BackboneSpec, forward, init_model
from adnet.trainer import TrainLog, TrainLogRecord

from conftest import TINY_SPEC

AUG16 = AugConfig(output_side=16)


def write_constant_tree(root, colors: dict[str, tuple[int, int, int]],
                        per_class: int = 2, side: int = 24) -> None:
    for name, rgb in colors.items():
        d = root / "train" / name
        d.mkdir(parents=True)
        for i in range(per_class):
            arr = np.full((side, side, 3), rgb, dtype=np.uint8)
            Image.fromarray(arr).save(d / f"img_{i}.png")


# ------------------------------------------------------------- eval_view

def test_eval_view_center_crops_to_output_side():
    gen = np.random.default_rng(0)
    pixels = gen.random((40, 64, 3), dtype=np.float32)
    view = eval_view(pixels, AUG16)
    assert view.shape == (16, 16, 3)


def test_eval_view_square_input_is_resize_only():
    pixels = np.full((32, 32, 3), 0.25, dtype=np.float32)
    view = eval_view(pixels, AUG16)
    # constant image survives resize and center crop, then normalizes
    assert np.allclose(view, (0.25 - 0.5) / 0.5, atol=1e-6)


def test_eval_view_is_deterministic():
    gen = np.random.default_rng(1)
    pixels = gen.random((50, 30, 3), dtype=np.float32)
    assert np.array_equal(eval_view(pixels, AUG16), eval_view(pixels, AUG16))


# -------------------------------------------------------------- accuracy

def oracle_state_and_dataset(tmp_path):
    """A dataset of two constant-color classes plus a head built to separate
    them exactly (nearest-feature-mean classifier in weight form)."""
    write_constant_tree(tmp_path, {"dark": (40, 40, 40), "light": (220, 220, 220)})
    ds = load_dataset(tmp_path, "train")
    state = init_model(TINY_SPEC, 2, seed=0, dropout_rate=0.0)
    views = np.stack([eval_view(ds.load_image(i).pixels, AUG16)
                      for i in range(len(ds))])
    feats, _ = forward(state, views, mode="eval")
    f_dark = feats[[l for _, l in ds.samples].index(0)]
    f_light = feats[[l for _, l in ds.samples].index(1)]
    w = np.stack([f_dark - f_light, f_light - f_dark], axis=1)
    b = np.array([-(f_dark @ f_dark - f_light @ f_light) / 2,
                  -(f_light @ f_light - f_dark @ f_dark) / 2])
    state.params["head.w"] = w.astype(np.float32)
    state.params["head.b"] = b.astype(np.float32)
    return state, ds


def test_accuracy_oracle_head_scores_100(tmp_path):
    state, ds = oracle_state_and_dataset(tmp_path)
    assert accuracy(state, ds, AUG16) == 100.0


def test_accuracy_inverted_head_scores_0(tmp_path):
    state, ds = oracle_state_and_dataset(tmp_path)
    state.params["head.w"] = -state.params["head.w"]
    state.params["head.b"] = -state.params["head.b"]
    assert accuracy(state, ds, AUG16) == 0.0


def test_accuracy_invariant_to_sample_order(tmp_path):
    state, ds = oracle_state_and_dataset(tmp_path)
    state.params["head.w"][0, 0] += 0.7  # arbitrary non-oracle head
    shuffled = dataclasses.replace(ds, samples=tuple(reversed(ds.samples)))
    assert accuracy(state, ds, AUG16) == accuracy(state, shuffled, AUG16)


def test_accuracy_batching_does_not_change_result(tmp_path):
    state, ds = oracle_state_and_dataset(tmp_path)
    assert accuracy(state, ds, AUG16, batch_size=1) == accuracy(
        state, ds, AUG16, batch_size=64)


def test_accuracy_rejects_empty_dataset():
    from pathlib import Path
    empty = Dataset(root_path=Path("mem"), classes=("a",), samples=(), split="test")
    state = init_model(TINY_SPEC, 2, seed=0)
    with pytest.raises(EmptyDataset):
        accuracy(state, empty, AUG16)


def test_accuracy_random_init_near_chance(synth_root):
    # an untrained model's argmax is label-independent, so accuracy sits in a
    # wide band around 1/num_classes (exact value pinned by the seeds)
    train = load_dataset(synth_root, "train")
    state = init_model(TINY_SPEC, train.num_classes, seed=123)
    acc = accuracy(state, train, AugConfig(output_side=32))
    assert 5.0 <= acc <= 65.0


# ------------------------------------------------------------ MC dropout

def test_mc_sweep_no_dropout_no_noise_is_constant():
    state = init_model(TINY_SPEC, 3, seed=0, dropout_rate=0.0)
    img = ImageSample(pixels=np.random.default_rng(0).random((24, 24, 3),
                                                             dtype=np.float32),
                      label=1)
    rep = mc_dropout_sweep(state, img, noise_sigmas=(0.0,), n_passes=40,
                           aug_cfg=AUG16)
    assert len(set(rep.predictions[0])) == 1
    assert rep.tracked_std[0].max() == 0.0
    assert rep.true_class == 1
    assert rep.tracked[0] == 1


def test_mc_sweep_dropout_gives_positive_variance():
    state = init_model(TINY_SPEC, 3, seed=0, dropout_rate=0.3)
    img = np.random.default_rng(1).random((24, 24, 3), dtype=np.float32)
    rep = mc_dropout_sweep(state, img, noise_sigmas=(0.0,), n_passes=60,
                           aug_cfg=AUG16, true_class=0)
    assert rep.tracked_std[0, 0] > 0.0


def test_mc_sweep_row_counts_and_csv(tmp_path):
    state = init_model(TINY_SPEC, 4, seed=2, dropout_rate=0.3)
    img = np.random.default_rng(2).random((24, 24, 3), dtype=np.float32)
    sigmas = (0.0, 0.1, 0.4)
    rep = mc_dropout_sweep(state, img, noise_sigmas=sigmas, n_passes=7,
                           aug_cfg=AUG16, tracked_k=3, true_class=2)
    assert [len(rows) for rows in rep.predictions] == [7, 7, 7]
    path = tmp_path / "unc.csv"
    rep.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["sigma", "pass", "class", "prob"]
    assert len(rows) == 1 + len(sigmas) * 7
    spath = tmp_path / "unc_summary.csv"
    rep.summary_to_csv(spath)
    srows = list(csv.reader(open(spath)))
    assert len(srows) == 1 + len(sigmas) * len(rep.tracked)


def test_mc_sweep_true_class_leads_tracking():
    state = init_model(TINY_SPEC, 5, seed=3, dropout_rate=0.2)
    img = np.random.default_rng(3).random((24, 24, 3), dtype=np.float32)
    rep = mc_dropout_sweep(state, img, noise_sigmas=(0.0, 0.05), n_passes=5,
                           aug_cfg=AUG16, tracked_k=3, true_class=4)
    assert rep.tracked[0] == 4
    assert len(rep.tracked) == 3
    assert len(set(rep.tracked)) == 3
    assert rep.tracked_mean.shape == (2, 3)


def test_mc_sweep_is_deterministic():
    state = init_model(TINY_SPEC, 3, seed=4, dropout_rate=0.3)
    img = np.random.default_rng(4).random((24, 24, 3), dtype=np.float32)
    kw = dict(noise_sigmas=(0.0, 0.2), n_passes=6, aug_cfg=AUG16,
              seed=9, true_class=0)
    a = mc_dropout_sweep(state, img, **kw)
    b = mc_dropout_sweep(state, img, **kw)
    assert a.predictions == b.predictions
    assert np.array_equal(a.tracked_mean, b.tracked_mean)


def test_mc_sweep_rejects_bad_arguments():
    state = init_model(TINY_SPEC, 3, seed=0)
    img = np.zeros((24, 24, 3), dtype=np.float32)
    with pytest.raises(InvalidSigma):
        mc_dropout_sweep(state, img, noise_sigmas=(0.0, -0.1), aug_cfg=AUG16)
    with pytest.raises(ValueError):
        mc_dropout_sweep(state, img, noise_sigmas=(0.0,), n_passes=0,
                         aug_cfg=AUG16)


def test_mc_sweep_noise_perturbs_probabilities():
    state = init_model(TINY_SPEC, 3, seed=5, dropout_rate=0.0)
    img = np.random.default_rng(5).random((24, 24, 3), dtype=np.float32)
    rep = mc_dropout_sweep(state, img, noise_sigmas=(0.0, 0.4), n_passes=10,
                           aug_cfg=AUG16, true_class=0)
    # zero dropout: all sigma=0 passes agree, sigma=0.4 passes scatter
    assert rep.tracked_std[0, 0] == 0.0
    assert rep.tracked_std[1, 0] > 0.0


def test_scatter_png_written(tmp_path):
    state = init_model(TINY_SPEC, 3, seed=6, dropout_rate=0.3)
    img = np.random.default_rng(6).random((24, 24, 3), dtype=np.float32)
    rep = mc_dropout_sweep(state, img, noise_sigmas=(0.0, 0.1), n_passes=4,
                           aug_cfg=AUG16, true_class=1)
    out = tmp_path / "unc.png"
    rep.scatter_png(out)
    assert out.stat().st_size > 1000


# -------------------------------------------------------- activation diff

def test_activation_diff_same_model_is_zero(tiny_state):
    img = np.random.default_rng(7).random((24, 24, 3), dtype=np.float32)
    diff = activation_diff(tiny_state, tiny_state, img, AUG16)
    assert np.array_equal(diff.heatmap, np.zeros_like(diff.heatmap))
    assert np.array_equal(diff.raw_diff, np.zeros_like(diff.raw_diff))


def test_activation_diff_antisymmetric(tiny_state):
    other = init_model(TINY_SPEC, 3, seed=42, dropout_rate=0.0)
    img = np.random.default_rng(8).random((24, 24, 3), dtype=np.float32)
    ab = activation_diff(tiny_state, other, img, AUG16)
    ba = activation_diff(other, tiny_state, img, AUG16)
    assert np.array_equal(ab.heatmap, -ba.heatmap)
    assert np.array_equal(ab.raw_diff, -ba.raw_diff)
    assert np.abs(ab.heatmap).max() > 0.0


def test_activation_diff_shapes(tiny_state):
    other = init_model(TINY_SPEC, 3, seed=43, dropout_rate=0.0)
    img = np.random.default_rng(9).random((40, 40, 3), dtype=np.float32)
    diff = activation_diff(tiny_state, other, img, AUG16)
    assert diff.heatmap.shape == (16, 16)
    assert diff.overlay.shape == (16, 16, 3)
    assert diff.raw_diff.ndim == 2
    assert 0.0 <= diff.overlay.min() and diff.overlay.max() <= 1.0


def test_activation_diff_rejects_different_backbones(tiny_state):
    other = init_model(BackboneSpec(widths=(8, 8), blocks=(1, 1), gn_groups=4),
                       3, seed=0)
    img = np.zeros((24, 24, 3), dtype=np.float32)
    with pytest.raises(SpecMismatch):
        activation_diff(tiny_state, other, img, AUG16)


def test_signed_overlay_maps_sign_to_color():
    base = np.full((4, 4, 3), 0.5, dtype=np.float32)
    heat = np.zeros((4, 4), dtype=np.float32)
    heat[0, 0] = 1.0
    heat[3, 3] = -1.0
    out = render_signed_overlay(base, heat)
    assert out[0, 0, 0] > out[0, 0, 2]  # positive cell pulls red over blue
    assert out[3, 3, 2] > out[3, 3, 0]  # negative cell pulls blue over red
    assert np.allclose(out[1, 1], 0.5, atol=1e-6)  # zero cell untouched


def test_signed_overlay_zero_map_returns_base():
    base = np.random.default_rng(10).random((5, 5, 3)).astype(np.float32)
    out = render_signed_overlay(base, np.zeros((5, 5), dtype=np.float32))
    assert np.array_equal(out, base)


def test_save_image_round_trip(tmp_path):
    arr = np.random.default_rng(11).random((6, 7, 3)).astype(np.float32)
    path = tmp_path / "img.png"
    save_image(path, arr)
    back = np.asarray(Image.open(path), dtype=np.float32) / 255.0
    assert back.shape == (6, 7, 3)
    assert np.abs(back - arr).max() <= 0.5 / 255.0 + 1e-6


# ------------------------------------------------------------ curve report

def fake_log(tmp_path, name, n=6, acc_every=3):
    records = []
    for step in range(n):
        acc = step % acc_every == acc_every - 1 or step == n - 1
        records.append(TrainLogRecord(
            step=step, lr_backbone=0.03, lr_classifier=0.06,
            loss_main=2.0 / (step + 1), loss_dist=0.1 / (step + 1),
            loss_agg=2.01 / (step + 1),
            train_acc=50.0 + step if acc else None,
            test_acc=40.0 + step if acc else None,
        ))
    path = tmp_path / name
    TrainLog(records).to_csv(path)
    return path


def test_read_log_round_trip(tmp_path):
    path = fake_log(tmp_path, "log.csv")
    rows = read_log(path)
    assert len(rows) == 6
    assert rows[0]["step"] == 0
    assert rows[0]["train_acc"] is None
    assert rows[2]["train_acc"] == 52.0
    assert rows[-1]["test_acc"] == 45.0
    assert rows[3]["loss_main"] == pytest.approx(0.5, rel=1e-9)


def test_read_log_missing_column_is_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("step,lr_backbone,lr_classifier,loss_main,loss_agg,"
                    "train_acc,test_acc\n0,0.03,0.03,2.0,2.0,,\n")
    with pytest.raises(MalformedLog, match="loss_dist"):
        read_log(path)


def test_read_log_unparsable_row_is_malformed(tmp_path):
    good = fake_log(tmp_path, "log.csv")
    text = good.read_text().splitlines()
    text[1] = text[1].replace("2", "two", 1)
    bad = tmp_path / "corrupt.csv"
    bad.write_text("\n".join(text) + "\n")
    with pytest.raises(MalformedLog):
        read_log(bad)


def test_curve_report_single_run(tmp_path):
    path = fake_log(tmp_path, "log.csv")
    out = tmp_path / "report"
    summary = curve_report(path, out)
    assert (out / "losses_vs_step.png").stat().st_size > 1000
    assert (out / "accuracy_vs_step.png").stat().st_size > 1000
    assert (out / "curve_summary.txt").exists()
    s = summary["run"]
    assert s["final_test_acc"] == 45.0
    assert s["best_test_acc"] == 45.0
    assert s["final_train_acc"] == 55.0
    assert s["train_test_gap"] == 10.0
    assert s["steps"] == 6


def test_curve_report_two_run_overlay(tmp_path):
    a = fake_log(tmp_path, "one.csv")
    b = fake_log(tmp_path, "two.csv", n=4)
    out = tmp_path / "report"
    summary = curve_report([a, b], out)
    assert set(summary) == {"one", "two"}
    assert summary["two"]["steps"] == 4
    text = (out / "curve_summary.txt").read_text()
    assert "one" in text and "two" in text
