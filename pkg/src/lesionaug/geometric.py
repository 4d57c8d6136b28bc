"""Affine warps, flips and random resized crops.

The affine transform composes rotation about the image center, x-axis shear
and uniform spatial scaling into a single matrix and resamples by backward
mapping with bilinear interpolation; out-of-bounds coordinates are filled by
symmetric reflection.  The crop sampler rejects candidate windows until the
realized integer window satisfies the area and relative-aspect bounds, which
keeps the advertised ranges exact despite rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imgcore import ImageBuffer, RngStream, bilinear_sample, resize_to, to_uint8

__all__ = [
    "AffineParams",
    "CropWindow",
    "sample_affine",
    "apply_affine",
    "flip_horizontal",
    "flip_vertical",
    "random_flip",
    "sample_crop",
    "crop",
    "crop_and_resize",
]


@dataclass(frozen=True)
class AffineParams:
    rotation: float  # degrees
    shear: float  # degrees, x axis
    area_scale: float

    def __post_init__(self):
        if not -90.0 <= self.rotation <= 90.0:
            raise ValueError(f"rotation out of [-90, 90]: {self.rotation}")
        if not -20.0 <= self.shear <= 20.0:
            raise ValueError(f"shear out of [-20, 20]: {self.shear}")
        if not 0.8 <= self.area_scale <= 1.2:
            raise ValueError(f"area_scale out of [0.8, 1.2]: {self.area_scale}")


@dataclass(frozen=True)
class CropWindow:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("crop window must be at least 1x1")
        if self.x < 0 or self.y < 0:
            raise ValueError("crop window origin must be non-negative")


def sample_affine(
    rng: RngStream,
    max_rotation: float = 90.0,
    max_shear: float = 20.0,
    area_range: tuple[float, float] = (0.8, 1.2),
) -> AffineParams:
    """Draw rotation, shear and area scale, in that order, independently."""
    rotation = rng.uniform(-max_rotation, max_rotation)
    shear = rng.uniform(-max_shear, max_shear)
    area_scale = rng.uniform(area_range[0], area_range[1])
    return AffineParams(rotation=rotation, shear=shear, area_scale=area_scale)


def _inverse_matrix(params: AffineParams) -> np.ndarray:
    # Forward map is scale(sqrt(area)) @ shear_x @ rotation about the center;
    # the inverse is built analytically so identity params give the exact
    # identity matrix (and therefore a bit-exact resample).
    rad = math.radians(params.rotation)
    cos_r, sin_r = math.cos(rad), math.sin(rad)
    tan_s = math.tan(math.radians(params.shear))
    inv_scale = 1.0 / math.sqrt(params.area_scale)
    rot_inv = np.array([[cos_r, sin_r], [-sin_r, cos_r]])
    shear_inv = np.array([[1.0, -tan_s], [0.0, 1.0]])
    return rot_inv @ shear_inv * inv_scale


def apply_affine(img: ImageBuffer, params: AffineParams) -> ImageBuffer:
    """Warp with the composed affine; output has the input dimensions."""
    h, w = img.height, img.width
    minv = _inverse_matrix(params)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    gx, gy = np.meshgrid(xs, ys)
    src_x = minv[0, 0] * gx + minv[0, 1] * gy + cx
    src_y = minv[1, 0] * gx + minv[1, 1] * gy + cy
    return ImageBuffer(to_uint8(bilinear_sample(img.pixels, src_x, src_y, reflect=True)))


def flip_horizontal(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(np.ascontiguousarray(img.pixels[:, ::-1]))


def flip_vertical(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(np.ascontiguousarray(img.pixels[::-1]))


def random_flip(img: ImageBuffer, rng: RngStream) -> ImageBuffer:
    """Flip horizontally and, independently, vertically, each with p = 0.5."""
    do_h = rng.random() < 0.5
    do_v = rng.random() < 0.5
    out = img
    if do_h:
        out = flip_horizontal(out)
    if do_v:
        out = flip_vertical(out)
    return out


def sample_crop(
    img_w: int,
    img_h: int,
    rng: RngStream,
    area_range: tuple[float, float] = (0.4, 1.0),
    aspect_range: tuple[float, float] = (0.75, 4.0 / 3.0),
    attempts: int = 10,
) -> CropWindow:
    """Sample a crop window with bounded area fraction and relative aspect.

    The target area fraction is uniform over ``area_range``; the aspect
    multiplier is log-uniform over ``aspect_range`` and applies to the
    original aspect ratio.  A candidate is accepted only if the rounded
    integer window still satisfies both bounds and fits inside the image;
    after ``attempts`` rejections the maximal centered window at the original
    aspect ratio (the full image) is returned.
    """
    if img_w < 1 or img_h < 1:
        raise ValueError("image must be at least 1x1")
    area = img_w * img_h
    orig_aspect = img_w / img_h
    log_lo, log_hi = math.log(aspect_range[0]), math.log(aspect_range[1])
    for _ in range(attempts):
        target = rng.uniform(area_range[0], area_range[1]) * area
        rel_aspect = math.exp(rng.uniform(log_lo, log_hi))
        aspect = orig_aspect * rel_aspect
        cw = round(math.sqrt(target * aspect))
        ch = round(math.sqrt(target / aspect))
        if cw < 1 or ch < 1 or cw > img_w or ch > img_h:
            continue
        if cw * ch < area_range[0] * area:
            continue
        realized_rel = (cw / ch) / orig_aspect
        if not aspect_range[0] <= realized_rel <= aspect_range[1]:
            continue
        x = rng.integers(0, img_w - cw, endpoint=True)
        y = rng.integers(0, img_h - ch, endpoint=True)
        return CropWindow(x=x, y=y, w=cw, h=ch)
    return CropWindow(x=0, y=0, w=img_w, h=img_h)


def _check_window(img: ImageBuffer, window: CropWindow) -> None:
    if window.x + window.w > img.width or window.y + window.h > img.height:
        raise ValueError(
            f"window {window} exceeds image bounds {img.width}x{img.height}"
        )


def crop(img: ImageBuffer, window: CropWindow) -> ImageBuffer:
    """Extract the window at native resolution."""
    _check_window(img, window)
    region = img.pixels[window.y : window.y + window.h, window.x : window.x + window.w]
    return ImageBuffer(np.ascontiguousarray(region))


def crop_and_resize(
    img: ImageBuffer, window: CropWindow, out_w: int, out_h: int
) -> ImageBuffer:
    """Extract the window and bilinear-resize it to (out_w, out_h)."""
    return resize_to(crop(img, window), out_w, out_h)
