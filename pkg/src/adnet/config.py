"""Run configuration: INI-style file sections plus typed overrides.

One text file carries flat key=value sections per module ([data], [train],
[loss], [aug], [model], [run]); command-line flags override file values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugConfig
from .model import BackboneSpec
from .objectives import LossConfig
from .trainer import TrainConfig

DIST_FLAG_MAP = {"kl": "kl", "l1": "l1", "l2": "l2",
                 "ce": "ce_logits", "focal": "focal_logits"}
SCHEDULE_FLAG_MAP = {"literal": "literal_halving",
                     "remaining": "remaining_halving", "none": "none"}


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(","))


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(","))


def _opt_float(s: str):
    v = s.strip().lower()
    return None if v in ("", "none") else float(v)


_TRAIN_CASTS = {
    "lr": float, "momentum": float, "batch_size": int, "steps_max": int,
    "d_aval": float, "scheduler_mode": str, "seed_data": int,
    "seed_model": int, "seed_augment": int, "branches": str,
    "vanilla": _bool, "dropout_rate": float, "eval_every": int,
    "checkpoint_every": int, "grad_clip": _opt_float,
}
_LOSS_CASTS = {
    "alpha": float, "dist_kind": str, "temperature": float,
    "detach_target": _bool, "epsilon": float, "focal_gamma": float,
    "alpha_decay": _bool,
}
_AUG_CASTS = {
    "random_crop": _bool, "horizontal_flip": _bool, "color_jitter": _bool,
    "normalize": _bool, "brightness": float, "contrast": float,
    "saturation": float, "mean": _floats, "std": _floats,
    "output_side": int, "cls_area": _floats, "target_area": _floats,
    "source_area": _floats, "aspect_range": _floats, "advanced": str,
    "multicrop_count": int, "multicrop_side": int,
    "scalemix_area": _floats, "cutmix_area": _floats,
}
_MODEL_CASTS = {"name": str, "widths": _ints, "blocks": _ints, "gn_groups": int}


@dataclass
class RunConfig:
    data_root: Path | None = None
    out_dir: Path = Path("runs/out")
    tag: str = ""
    percent: float | None = None
    manifest: Path | None = None
    train: TrainConfig = field(default_factory=TrainConfig)


def read_ini(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser()
    loaded = cp.read(path)
    if not loaded:
        raise FileNotFoundError(f"config file not found: {path}")
    return {s: dict(cp[s]) for s in cp.sections()}


def _cast_section(section: dict[str, str], casts: dict, where: str) -> dict:
    out = {}
    for key, raw in section.items():
        if key not in casts:
            raise ValueError(f"unknown key {key!r} in [{where}]")
        out[key] = casts[key](raw)
    return out


def build_run_config(sections: dict[str, dict[str, str]] | None = None,
                     overrides: dict[str, dict] | None = None) -> RunConfig:
    """Defaults <- config file <- typed overrides, later wins per key.

    ``overrides`` is keyed by section name with already-typed values. When
    percent is given anywhere and d_aval is not, d_aval follows percent (the
    classifier-LR rule keys off the available-data fraction).
    """
    sections = sections or {}
    overrides = overrides or {}

    def merged(name: str, casts) -> dict:
        vals = _cast_section(sections.get(name, {}), casts, name)
        for k, v in overrides.get(name, {}).items():
            if v is not None:
                if k not in casts:
                    raise ValueError(f"unknown override {k!r} in [{name}]")
                vals[k] = v
        return vals

    train_kw = merged("train", _TRAIN_CASTS)
    loss_kw = merged("loss", _LOSS_CASTS)
    aug_kw = merged("aug", _AUG_CASTS)
    model_kw = merged("model", _MODEL_CASTS)

    data_sec = dict(sections.get("data", {}))
    data_over = overrides.get("data", {})
    for k, v in data_over.items():
        if v is not None:
            data_sec[k] = v
    run_sec = dict(sections.get("run", {}))
    for k, v in overrides.get("run", {}).items():
        if v is not None:
            run_sec[k] = v

    percent = data_sec.get("percent")
    percent = float(percent) if percent not in (None, "") else None
    if percent is not None and "d_aval" not in train_kw:
        train_kw["d_aval"] = percent

    train = TrainConfig(
        loss=LossConfig(**loss_kw),
        aug=AugConfig(**aug_kw),
        backbone=BackboneSpec(**model_kw),
        **train_kw,
    )
    manifest = data_sec.get("manifest")
    return RunConfig(
        data_root=Path(data_sec["root"]) if data_sec.get("root") else None,
        out_dir=Path(run_sec.get("out", "runs/out")),
        tag=str(run_sec.get("tag", "")),
        percent=percent,
        manifest=Path(manifest) if manifest else None,
        train=train,
    )
