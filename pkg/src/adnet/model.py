"""Backbone abstraction and the shared-weight multi-branch forward pass.

One parameter set serves every branch: the classification view produces
logits through the classifier head, while the distillation views only need
the pooled feature vector. The shipped backbone is a small residual conv
net (3 stages, group-normalized, global average pooling) that trains from
scratch at desk scale; anything exposing ``forward -> width-d features``
plugs into the same head and losses.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import InvalidSpec, ShapeMismatch
from .rng import derive_rng

CHECKPOINT_MAGIC = b"ADNC"
CHECKPOINT_VERSION = 1

MODES = ("train", "eval", "mc_dropout")


@dataclass(frozen=True)
class BackboneSpec:
    """Builder descriptor of the shipped convolutional backbone."""

    name: str = "smallres"
    widths: tuple[int, ...] = (32, 64, 128)
    blocks: tuple[int, ...] = (1, 1, 1)
    gn_groups: int = 8

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def validate(self) -> None:
        if not self.widths or any(w < 1 for w in self.widths):
            raise InvalidSpec(f"widths must be positive, got {self.widths}")
        if len(self.blocks) != len(self.widths) or any(b < 1 for b in self.blocks):
            raise InvalidSpec(
                f"blocks must match widths and be positive, got {self.blocks}"
            )
        if self.gn_groups < 1:
            raise InvalidSpec(f"gn_groups must be >= 1, got {self.gn_groups}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "widths": list(self.widths),
            "blocks": list(self.blocks),
            "gn_groups": self.gn_groups,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(
            name=d["name"],
            widths=tuple(d["widths"]),
            blocks=tuple(d["blocks"]),
            gn_groups=int(d["gn_groups"]),
        )


@dataclass
class ForwardBundle:
    """Per-batch outputs of the three branches (plus optional extras)."""

    cls_logits: np.ndarray
    feat_target: np.ndarray
    feat_source: np.ndarray
    feat_cls: np.ndarray | None = None
    feat_extras: tuple[np.ndarray, ...] = ()


@dataclass
class ModelState:
    """The single shared parameter set plus head/dropout configuration."""

    spec: BackboneSpec
    num_classes: int
    params: dict[str, np.ndarray]
    dropout_rate: float = 0.3
    meta: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ModelState":
        return ModelState(
            spec=self.spec,
            num_classes=self.num_classes,
            params={k: v.copy() for k, v in self.params.items()},
            dropout_rate=self.dropout_rate,
            meta=dict(self.meta),
        )


def _gn_groups(spec: BackboneSpec, width: int) -> int:
    g = min(spec.gn_groups, width)
    while width % g:
        g -= 1
    return g


def init_model(spec: BackboneSpec, num_classes: int, seed: int,
               dropout_rate: float = 0.3, dtype=np.float32) -> ModelState:
    """Deterministically initialize parameters for ``spec`` + classifier head.

    Convolutions get He-normal weights (no bias; group norm follows), norm
    scales start at 1, and the classifier bias starts at zero.
    """
    spec.validate()
    if num_classes < 2:
        raise InvalidSpec(f"num_classes must be >= 2, got {num_classes}")
    if not (0.0 <= dropout_rate < 1.0):
        raise InvalidSpec(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    gen = derive_rng(seed, "init")
    params: dict[str, np.ndarray] = {}

    def conv(name: str, c_in: int, c_out: int):
        std = np.sqrt(2.0 / (c_in * 9))
        params[f"{name}.w"] = gen.normal(0.0, std, size=(c_out, c_in, 3, 3)).astype(dtype)

    def gn(name: str, width: int):
        params[f"{name}.g"] = np.ones(width, dtype=dtype)
        params[f"{name}.b"] = np.zeros(width, dtype=dtype)

    conv("stem.conv", 3, spec.widths[0])
    gn("stem.gn", spec.widths[0])
    for si, width in enumerate(spec.widths):
        if si > 0:
            conv(f"s{si}.t.conv", spec.widths[si - 1], width)
            gn(f"s{si}.t.gn", width)
        for bi in range(spec.blocks[si]):
            conv(f"s{si}.b{bi}.conv1", width, width)
            gn(f"s{si}.b{bi}.gn1", width)
            conv(f"s{si}.b{bi}.conv2", width, width)
            gn(f"s{si}.b{bi}.gn2", width)
    d = spec.feature_dim
    params["head.w"] = gen.normal(0.0, np.sqrt(1.0 / d), size=(d, num_classes)).astype(dtype)
    params["head.b"] = np.zeros(num_classes, dtype=dtype)
    return ModelState(spec=spec, num_classes=num_classes, params=params,
                      dropout_rate=float(dropout_rate))


# ------------------------------------------------------------ backbone

def _conv_gn_relu(params, name_conv, name_gn, x, spec, stride, cache_list):
    h, c_conv = L.conv2d_forward(x, params[f"{name_conv}.w"], stride=stride, pad=1)
    groups = _gn_groups(spec, h.shape[1])
    h, c_gn = L.groupnorm_forward(h, params[f"{name_gn}.g"], params[f"{name_gn}.b"], groups)
    h, mask = L.relu_forward(h)
    if cache_list is not None:
        cache_list.append((name_conv, name_gn, c_conv, c_gn, mask))
    return h


def _conv_gn_relu_backward(params, entry, dout, grads):
    name_conv, name_gn, c_conv, c_gn, mask = entry
    dout = L.relu_backward(dout, mask)
    dout, dg, db = L.groupnorm_backward(dout, c_gn)
    grads[f"{name_gn}.g"] += dg
    grads[f"{name_gn}.b"] += db
    dx, dw = L.conv2d_backward(dout, params[f"{name_conv}.w"], c_conv)
    grads[f"{name_conv}.w"] += dw
    return dx


def backbone_forward(state: ModelState, x: np.ndarray, want_cache: bool = False):
    """x: (N,3,H,W) -> (features (N,d), conv_map (N,d,h,w), cache)."""
    spec = state.spec
    params = state.params
    cache = {"units": []} if want_cache else None
    units = cache["units"] if want_cache else None

    h = _conv_gn_relu(params, "stem.conv", "stem.gn", x, spec, 1, units)
    for si in range(len(spec.widths)):
        if si > 0:
            h = _conv_gn_relu(params, f"s{si}.t.conv", f"s{si}.t.gn", h, spec, 2, units)
        for bi in range(spec.blocks[si]):
            prefix = f"s{si}.b{bi}"
            r = h
            z, c1 = L.conv2d_forward(h, params[f"{prefix}.conv1.w"], stride=1, pad=1)
            groups = _gn_groups(spec, z.shape[1])
            z, cg1 = L.groupnorm_forward(z, params[f"{prefix}.gn1.g"], params[f"{prefix}.gn1.b"], groups)
            z, m1 = L.relu_forward(z)
            z, c2 = L.conv2d_forward(z, params[f"{prefix}.conv2.w"], stride=1, pad=1)
            z, cg2 = L.groupnorm_forward(z, params[f"{prefix}.gn2.g"], params[f"{prefix}.gn2.b"], groups)
            h, m_out = L.relu_forward(z + r)
            if want_cache:
                units.append(("block", prefix, c1, cg1, m1, c2, cg2, m_out))
    conv_map = h
    feats, gap_cache = L.gap_forward(h)
    if want_cache:
        cache["gap"] = gap_cache
    return feats, conv_map, cache


def backbone_backward(state: ModelState, cache, dfeats: np.ndarray, grads) -> None:
    """Accumulate parameter gradients of a scalar loss through the backbone."""
    params = state.params
    dh = L.gap_backward(dfeats, cache["gap"])
    for entry in reversed(cache["units"]):
        if entry[0] == "block":
            _, prefix, c1, cg1, m1, c2, cg2, m_out = entry
            dz = L.relu_backward(dh, m_out)
            dres = dz  # residual shortcut
            dz, dg2, db2 = L.groupnorm_backward(dz, cg2)
            grads[f"{prefix}.gn2.g"] += dg2
            grads[f"{prefix}.gn2.b"] += db2
            dz, dw2 = L.conv2d_backward(dz, params[f"{prefix}.conv2.w"], c2)
            grads[f"{prefix}.conv2.w"] += dw2
            dz = L.relu_backward(dz, m1)
            dz, dg1, db1 = L.groupnorm_backward(dz, cg1)
            grads[f"{prefix}.gn1.g"] += dg1
            grads[f"{prefix}.gn1.b"] += db1
            dz, dw1 = L.conv2d_backward(dz, params[f"{prefix}.conv1.w"], c1)
            grads[f"{prefix}.conv1.w"] += dw1
            dh = dz + dres
        else:
            dh = _conv_gn_relu_backward(params, entry, dh, grads)


def head_forward(state: ModelState, feats: np.ndarray, mode: str,
                 rng: np.random.Generator | None = None):
    """Dropout (train / mc_dropout modes) followed by the linear classifier."""
    active = mode in ("train", "mc_dropout")
    dropped, keep = L.dropout_forward(feats, state.dropout_rate, rng, active)
    logits, lin_cache = L.linear_forward(dropped, state.params["head.w"], state.params["head.b"])
    return logits, (keep, lin_cache)


def head_backward(state: ModelState, cache, dlogits: np.ndarray, grads):
    keep, lin_cache = cache
    dx, dw, db = L.linear_backward(dlogits, state.params["head.w"], lin_cache)
    grads["head.w"] += dw
    grads["head.b"] += db
    return L.dropout_backward(dx, keep)


def zero_grads(state: ModelState) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in state.params.items()}


def _check_batch(batch: np.ndarray) -> np.ndarray:
    if batch.ndim != 4 or batch.shape[3] != 3:
        raise ShapeMismatch(f"expected (N,H,W,3) batch, got shape {batch.shape}")
    if batch.shape[1] < 8 or batch.shape[2] < 8:
        raise ShapeMismatch(f"batch side below 8 px: {batch.shape}")
    return batch


def _to_nchw(batch: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(_check_batch(np.asarray(batch)).transpose(0, 3, 1, 2),
                                dtype=dtype)


def forward(state: ModelState, batch: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None):
    """Run one branch: (N,H,W,3) batch -> (features (N,d), logits (N,C)).

    eval mode is deterministic (dropout inactive); train and mc_dropout
    apply dropout at the stored rate and then require ``rng``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    x = _to_nchw(batch, state.dtype)
    feats, _, _ = backbone_forward(state, x, want_cache=False)
    logits, _ = head_forward(state, feats, mode, rng)
    return feats, logits


def forward_features_map(state: ModelState, batch: np.ndarray):
    """Features plus the final pre-pooling activation map (N,d,h,w)."""
    x = _to_nchw(batch, state.dtype)
    feats, conv_map, _ = backbone_forward(state, x, want_cache=False)
    return feats, conv_map


def forward_triplet(state: ModelState, triplets, mode: str = "eval",
                    rng: np.random.Generator | None = None) -> ForwardBundle:
    """Forward a batch of ViewTriplets through the single shared parameter set."""
    cls_batch = np.stack([t.cls_view for t in triplets])
    target_batch = np.stack([t.target_view for t in triplets])
    source_batch = np.stack([t.source_view for t in triplets])
    if not (cls_batch.shape[0] == target_batch.shape[0] == source_batch.shape[0]):
        raise ShapeMismatch("triplet batches differ in size")
    feat_cls, cls_logits = forward(state, cls_batch, mode=mode, rng=rng)
    feat_target, _, _ = backbone_forward(state, _to_nchw(target_batch, state.dtype))
    feat_source, _, _ = backbone_forward(state, _to_nchw(source_batch, state.dtype))
    extras = []
    n_extra = len(triplets[0].extra_views)
    for v in range(n_extra):
        batch_v = np.stack([t.extra_views[v] for t in triplets])
        f, _, _ = backbone_forward(state, _to_nchw(batch_v, state.dtype))
        extras.append(f)
    return ForwardBundle(
        cls_logits=cls_logits,
        feat_target=feat_target,
        feat_source=feat_source,
        feat_cls=feat_cls,
        feat_extras=tuple(extras),
    )


# ---------------------------------------------------------- checkpoints

def save_checkpoint(state: ModelState, path, step: int = 0,
                    extra_meta: dict | None = None) -> None:
    """Write the versioned named-array container (little-endian payload)."""
    arrays = []
    offset = 0
    payload = []
    for name, arr in state.params.items():
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        arrays.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "offset": offset,
            "nbytes": len(raw),
        })
        payload.append(raw)
        offset += len(raw)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "meta": {
            "spec": state.spec.to_dict(),
            "num_classes": state.num_classes,
            "dropout_rate": state.dropout_rate,
            "step": int(step),
            **(extra_meta or {}),
        },
        "arrays": arrays,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in payload:
            fh.write(raw)


def load_checkpoint(path) -> tuple[ModelState, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise InvalidSpec(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise InvalidSpec(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len))
        blob = fh.read()
    params = {}
    for entry in header["arrays"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        params[entry["name"]] = (
            arr.reshape(entry["shape"]).astype(np.dtype(entry["dtype"]), copy=True)
        )
    meta = header["meta"]
    state = ModelState(
        spec=BackboneSpec.from_dict(meta["spec"]),
        num_classes=int(meta["num_classes"]),
        params=params,
        dropout_rate=float(meta["dropout_rate"]),
        meta=meta,
    )
    return state, meta
