"""Multi-view augmentation: one full classification view plus mid-size target
and small source crops, all pushed through one shared transform set.

Crop areas are drawn uniformly from the configured range and kept even when
the aspect ratio has to be relaxed for geometric feasibility, so the realized
area distribution stays uniform. Every function takes an explicit seeded
stream; view construction is a pure function of (image bytes, config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .data import ImageSample
from .errors import ImageTooSmall, ShapeMismatch, WrongArity
from .rng import RngStream

MIN_CROP_SIDE = 8

ADVANCED_KINDS = ("none", "scalemix", "multicrop", "cutmix", "asymaug")


@dataclass(frozen=True)
class CropParams:
    """A crop rectangle plus its realized geometry bookkeeping."""

    x: int
    y: int
    w: int
    h: int
    area_fraction: float
    aspect: float


@dataclass(frozen=True)
class AugConfig:
    """Knobs of the augmentation pipeline.

    basic-set flags switch the shared transforms; the area ranges define the
    three view categories. ``advanced`` selects an optional extra technique
    applied on top of the standard triplet.
    """

    random_crop: bool = True
    horizontal_flip: bool = True
    color_jitter: bool = True
    normalize: bool = True
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    output_side: int = 224
    cls_area: tuple[float, float] = (0.5, 1.0)
    target_area: tuple[float, float] = (0.65, 0.85)
    source_area: tuple[float, float] = (0.01, 0.65)
    aspect_range: tuple[float, float] = (0.75, 4.0 / 3.0)
    advanced: str = "none"
    multicrop_count: int = 4
    multicrop_side: int = 96
    scalemix_area: tuple[float, float] = (0.0, 1.0)
    cutmix_area: tuple[float, float] = (0.0, 0.5)

    def __post_init__(self):
        if self.output_side <= 0:
            raise ValueError(f"output_side must be positive, got {self.output_side}")
        for name in ("cls_area", "target_area", "source_area"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi <= 1.0):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})")
        if self.advanced not in ADVANCED_KINDS:
            raise ValueError(f"advanced must be one of {ADVANCED_KINDS}, got {self.advanced!r}")


@dataclass(frozen=True)
class ViewTriplet:
    """The three augmented views of one input image.

    ``extra_views`` is populated only by the multicrop technique; ``info``
    carries per-technique bookkeeping such as the cutmix patch fraction.
    """

    cls_view: np.ndarray
    target_view: np.ndarray
    source_view: np.ndarray
    target_crop: CropParams
    source_crop: CropParams
    cls_crop: CropParams | None = None
    extra_views: tuple[np.ndarray, ...] = ()
    info: dict = field(default_factory=dict)


def _image_shape(image) -> tuple[int, int]:
    if isinstance(image, ImageSample):
        return image.pixels.shape[0], image.pixels.shape[1]
    if isinstance(image, np.ndarray):
        return image.shape[0], image.shape[1]
    h, w = image  # bare (H, W) is accepted for geometry-only sampling
    return int(h), int(w)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers. Identity when sizes match."""
    in_h, in_w = img.shape[0], img.shape[1]
    if in_h == out_h and in_w == out_w:
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(img.dtype)
    wx = (xs - x0).astype(img.dtype)
    if img.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
        top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
        bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    else:
        wy = wy[:, None]
        wx = wx[None, :]
        top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
        bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def _candidate_sides(target_area: float, aspect: float, im_h: int, im_w: int):
    """Integer (w, h) candidates bracketing the continuous solution."""
    w_real = math.sqrt(target_area * aspect)
    h_real = math.sqrt(target_area / aspect)
    cands = []
    for w in (math.floor(w_real), math.ceil(w_real)):
        for h in (math.floor(h_real), math.ceil(h_real)):
            w_c = min(max(w, MIN_CROP_SIDE), im_w)
            h_c = min(max(h, MIN_CROP_SIDE), im_h)
            cands.append((w_c, h_c))
    # dedupe, stable order
    seen, out = set(), []
    for c in cands:
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def sample_crop(image, area_range, aspect_range, rng: np.random.Generator) -> CropParams:
    """Draw one random crop with area uniform over ``area_range``.

    The area fraction is drawn once and kept; on infeasible geometry the
    aspect range is progressively shrunk towards 1, and the final fallback is
    a centered square at the drawn area. Sides are clamped to >= 8 px, so on
    tiny images the realized fraction can exceed the drawn one (post-clamp
    semantics).
    """
    im_h, im_w = _image_shape(image)
    if im_h < MIN_CROP_SIDE or im_w < MIN_CROP_SIDE:
        raise ImageTooSmall(f"image {im_h}x{im_w} is below the {MIN_CROP_SIDE} px minimum")
    lo, hi = float(area_range[0]), float(area_range[1])
    a_lo, a_hi = float(aspect_range[0]), float(aspect_range[1])
    frac = float(rng.uniform(lo, hi))
    target = frac * im_h * im_w
    max_attempts = 10
    for attempt in range(max_attempts):
        relax = 1.0 - attempt / max_attempts
        log_a = rng.uniform(relax * math.log(a_lo), relax * math.log(a_hi))
        aspect = math.exp(log_a)
        best = None
        for w, h in _candidate_sides(target, aspect, im_h, im_w):
            realized = (w * h) / (im_h * im_w)
            if lo <= realized <= hi + 1e-12:
                err = abs(w * h - target)
                if best is None or err < best[0]:
                    best = (err, w, h)
        if best is not None:
            _, w, h = best
            x = int(rng.integers(0, im_w - w + 1))
            y = int(rng.integers(0, im_h - h + 1))
            return CropParams(x=x, y=y, w=w, h=h,
                              area_fraction=(w * h) / (im_h * im_w), aspect=w / h)
    # centered square at the drawn area, clamped to image and minimum side
    side = int(round(math.sqrt(target)))
    side = min(max(side, MIN_CROP_SIDE), im_h, im_w)
    x = (im_w - side) // 2
    y = (im_h - side) // 2
    return CropParams(x=x, y=y, w=side, h=side,
                      area_fraction=(side * side) / (im_h * im_w), aspect=1.0)


def _crop_pixels(pixels: np.ndarray, crop: CropParams) -> np.ndarray:
    return pixels[crop.y:crop.y + crop.h, crop.x:crop.x + crop.w]


def _luminance(img: np.ndarray) -> np.ndarray:
    return (0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2])[..., None]


def _color_jitter(img, cfg: AugConfig, gen, scale: float = 1.0):
    # factor draws happen unconditionally per enabled jitter so the stream
    # stays aligned regardless of strength values
    b = gen.uniform(max(0.0, 1 - cfg.brightness * scale), 1 + cfg.brightness * scale)
    c = gen.uniform(max(0.0, 1 - cfg.contrast * scale), 1 + cfg.contrast * scale)
    s = gen.uniform(max(0.0, 1 - cfg.saturation * scale), 1 + cfg.saturation * scale)
    img = img * b
    img = img.mean() + (img - img.mean()) * c
    gray = _luminance(img)
    img = gray + (img - gray) * s
    return img


def normalize_view(img: np.ndarray, cfg: AugConfig) -> np.ndarray:
    mean = np.asarray(cfg.mean, dtype=img.dtype)
    std = np.asarray(cfg.std, dtype=img.dtype)
    return (img - mean) / std


def _basic_view(pixels, crop, cfg: AugConfig, gen,
                out_side=None, jitter_scale=1.0, blur_sigma_range=None):
    """Crop -> resize -> flip -> jitter (-> blur) -> clip -> normalize."""
    img = _crop_pixels(pixels, crop) if crop is not None else pixels
    side = cfg.output_side if out_side is None else out_side
    img = resize_bilinear(img.astype(np.float32), side, side)
    if cfg.horizontal_flip and gen.random() < 0.5:
        img = img[:, ::-1, :]
    if cfg.color_jitter:
        img = _color_jitter(img, cfg, gen, scale=jitter_scale)
    if blur_sigma_range is not None:
        sigma = gen.uniform(*blur_sigma_range)
        img = ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0.0))
    img = np.clip(img, 0.0, 1.0)
    if cfg.normalize:
        img = normalize_view(img, cfg)
    return np.ascontiguousarray(img, dtype=np.float32)


def make_triplet(image: ImageSample, cfg: AugConfig, rng: RngStream) -> ViewTriplet:
    """Build the classification/target/source views of one image.

    All three views pass through the same transform set with independently
    drawn parameters per view. Each view consumes its own child stream, so
    skipping a branch (e.g. at alpha=0) never shifts the other views' draws.
    """
    pixels = image.pixels
    im_h, im_w = pixels.shape[0], pixels.shape[1]
    info: dict = {}

    gen_cls = rng.child(0).generator()
    cls_crop = None
    if cfg.random_crop:
        cls_crop = sample_crop((im_h, im_w), cfg.cls_area, cfg.aspect_range, gen_cls)
    cls_view = _basic_view(pixels, cls_crop, cfg, gen_cls)

    gen_t = rng.child(1).generator()
    target_crop = sample_crop((im_h, im_w), cfg.target_area, cfg.aspect_range, gen_t)
    target_view = _basic_view(pixels, target_crop, cfg, gen_t)

    gen_s = rng.child(2).generator()
    source_crop = sample_crop((im_h, im_w), cfg.source_area, cfg.aspect_range, gen_s)
    if cfg.advanced == "asymaug":
        source_view = _basic_view(pixels, source_crop, cfg, gen_s,
                                  jitter_scale=2.0, blur_sigma_range=(0.1, 2.0))
    else:
        source_view = _basic_view(pixels, source_crop, cfg, gen_s)

    extra_views: tuple[np.ndarray, ...] = ()
    if cfg.advanced in ("scalemix", "cutmix"):
        gen_m = rng.child(3).generator()
        mix_crop = sample_crop((im_h, im_w), cfg.source_area, cfg.aspect_range, gen_m)
        mix_view = _basic_view(pixels, mix_crop, cfg, gen_m)
        if cfg.advanced == "scalemix":
            source_view = apply_advanced("scalemix", [source_view, mix_view],
                                         rng.child(4), cfg)
        else:
            source_view, frac = apply_advanced("cutmix", [source_view, mix_view],
                                               rng.child(4), cfg)
            info["cutmix_patch_fraction"] = frac
    elif cfg.advanced == "multicrop":
        extra_views = tuple(apply_advanced("multicrop", [pixels], rng.child(3), cfg))

    return ViewTriplet(
        cls_view=cls_view,
        target_view=target_view,
        source_view=source_view,
        target_crop=target_crop,
        source_crop=source_crop,
        cls_crop=cls_crop,
        extra_views=extra_views,
        info=info,
    )


def _mask_rect(shape, frac: float, gen) -> tuple[int, int, int, int]:
    """Rectangle of ~frac of the frame, uniformly placed. Returns x,y,w,h."""
    h, w = shape[0], shape[1]
    rw = int(round(w * math.sqrt(frac)))
    rh = int(round(h * math.sqrt(frac)))
    rw, rh = min(rw, w), min(rh, h)
    x = int(gen.integers(0, w - rw + 1)) if rw < w else 0
    y = int(gen.integers(0, h - rh + 1)) if rh < h else 0
    return x, y, rw, rh


def apply_advanced(kind: str, views, rng: RngStream, cfg: AugConfig | None = None):
    """Apply one advanced augmentation technique.

    scalemix: [a, b] -> one view, b pasted inside a rectangular binary mask.
    cutmix:   [a, b] -> (view, patch_area_fraction).
    multicrop: [pixels] -> list of low-resolution crop views.
    asymaug:  [target, source] -> (target, strengthened source).
    """
    if kind == "none":
        raise ValueError("apply_advanced requires kind != 'none'")
    if kind not in ADVANCED_KINDS:
        raise ValueError(f"unknown advanced kind {kind!r}")
    cfg = cfg if cfg is not None else AugConfig()
    views = list(views)
    gen = rng.generator() if isinstance(rng, RngStream) else rng

    if kind in ("scalemix", "cutmix", "asymaug"):
        if len(views) != 2:
            raise WrongArity(f"{kind} needs exactly two views, got {len(views)}")
    elif kind == "multicrop":
        if len(views) != 1:
            raise WrongArity(f"multicrop needs exactly one image, got {len(views)}")

    if kind == "scalemix":
        a, b = views
        if a.shape != b.shape:
            raise ShapeMismatch(f"scalemix views differ in shape: {a.shape} vs {b.shape}")
        frac = float(gen.uniform(*cfg.scalemix_area))
        x, y, rw, rh = _mask_rect(a.shape, frac, gen)
        out = a.copy()
        out[y:y + rh, x:x + rw] = b[y:y + rh, x:x + rw]
        return out

    if kind == "cutmix":
        a, b = views
        if a.shape != b.shape:
            raise ShapeMismatch(f"cutmix views differ in shape: {a.shape} vs {b.shape}")
        frac = float(gen.uniform(*cfg.cutmix_area))
        x, y, rw, rh = _mask_rect(a.shape, frac, gen)
        out = a.copy()
        out[y:y + rh, x:x + rw] = b[y:y + rh, x:x + rw]
        realized = (rw * rh) / (a.shape[0] * a.shape[1])
        return out, realized

    if kind == "multicrop":
        pixels = views[0]
        stream = rng if isinstance(rng, RngStream) else None
        out = []
        for v in range(cfg.multicrop_count):
            g = stream.child(v).generator() if stream is not None else gen
            crop = sample_crop(pixels, cfg.source_area, cfg.aspect_range, g)
            out.append(_basic_view(pixels, crop, cfg, g, out_side=cfg.multicrop_side))
        return out

    # asymaug: strengthen the second view relative to the first
    target, source = views
    jitter_cfg = replace(cfg, color_jitter=True)
    src = _color_jitter(source.astype(np.float32), jitter_cfg, gen, scale=2.0)
    sigma = gen.uniform(0.1, 2.0)
    src = ndimage.gaussian_filter(src, sigma=(sigma, sigma, 0.0))
    return target, src.astype(np.float32)
