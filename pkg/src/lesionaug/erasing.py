"""Random erasing: occlude a random rectangle with uniform noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imgcore import ImageBuffer, RngStream

__all__ = ["ErasingParams", "random_erasing"]


@dataclass(frozen=True)
class ErasingParams:
    apply_probability: float = 0.5
    area_range: tuple[float, float] = (0.02, 0.30)
    aspect_range: tuple[float, float] = (0.3, 3.3)

    def __post_init__(self):
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError("apply_probability must be in [0, 1]")
        lo, hi = self.area_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("area_range must satisfy 0 < lo <= hi <= 1")
        alo, ahi = self.aspect_range
        if not 0.0 < alo <= ahi:
            raise ValueError("aspect_range must be positive and ordered")


def random_erasing(
    img: ImageBuffer, rng: RngStream, params: ErasingParams = ErasingParams()
) -> ImageBuffer:
    """With probability p, overwrite one rectangle with per-pixel noise.

    The rectangle area is uniform over ``area_range`` of the image area and
    its aspect is log-uniform over ``aspect_range``.  A candidate is kept
    only if the rounded rectangle fits in the image and its realized area
    stays within the advertised maximum; after 100 failed attempts the image
    is returned unchanged.
    """
    if rng.random() >= params.apply_probability:
        return img
    w, h = img.width, img.height
    area = w * h
    lo, hi = params.area_range
    log_alo, log_ahi = math.log(params.aspect_range[0]), math.log(params.aspect_range[1])
    for _ in range(100):
        target = rng.uniform(lo, hi) * area
        aspect = math.exp(rng.uniform(log_alo, log_ahi))
        rect_w = round(math.sqrt(target * aspect))
        rect_h = round(math.sqrt(target / aspect))
        if rect_w < 1 or rect_h < 1 or rect_w > w or rect_h > h:
            continue
        if rect_w * rect_h > hi * area:
            continue
        x = rng.integers(0, w - rect_w, endpoint=True)
        y = rng.integers(0, h - rect_h, endpoint=True)
        noise = rng.integers(
            0, 255, size=(rect_h, rect_w, 3), endpoint=True, dtype=np.uint8
        )
        out = img.to_array()
        out[y : y + rect_h, x : x + rect_w] = noise
        return ImageBuffer(out)
    return img
