"""Color transforms: saturation, contrast, brightness and hue shift.

The adjustments use blend semantics (brightness blends toward black,
contrast toward the mean luma, saturation toward the per-pixel luma) and
hue is a rotation in HSV space.  Arithmetic runs in float64 and is rounded
half-to-even at the final clamp of each adjustment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import ImageBuffer, RngStream, to_uint8

__all__ = [
    "ColorJitterParams",
    "adjust_brightness",
    "adjust_contrast",
    "adjust_saturation",
    "shift_hue",
    "sample_color_jitter",
    "apply_color_jitter",
]

# Rec. 601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class ColorJitterParams:
    saturation_factor: float
    contrast_factor: float
    brightness_factor: float
    hue_delta: float = 0.0

    def __post_init__(self):
        for name in ("saturation_factor", "contrast_factor", "brightness_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not -0.5 <= self.hue_delta <= 0.5:
            raise ValueError("hue_delta must be in [-0.5, 0.5]")


def _check_factor(factor: float) -> None:
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")


def adjust_brightness(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Blend toward black: ``out = in * factor``."""
    _check_factor(factor)
    if factor == 1.0:
        return img
    return ImageBuffer(to_uint8(img.pixels.astype(np.float64) * factor))


def adjust_contrast(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Blend toward the scalar mean of the luma image."""
    _check_factor(factor)
    if factor == 1.0:
        return img
    work = img.pixels.astype(np.float64)
    mean_gray = (work @ _LUMA).mean()
    return ImageBuffer(to_uint8(mean_gray + factor * (work - mean_gray)))


def adjust_saturation(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Blend toward the per-pixel luma (factor 0 is full grayscale)."""
    _check_factor(factor)
    if factor == 1.0:
        return img
    work = img.pixels.astype(np.float64)
    gray = (work @ _LUMA)[..., None]
    return ImageBuffer(to_uint8(gray + factor * (work - gray)))


def _rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RGB in [0, 1] to H, S, V; hue in [0, 1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe_span = np.where(span > 0, span, 1.0)
    rc = (maxc - r) / safe_span
    gc = (maxc - g) / safe_span
    bc = (maxc - b) / safe_span
    h = np.where(
        maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc)
    )
    h = np.where(span > 0, (h / 6.0) % 1.0, 0.0)
    return h, s, v


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [
        (v, t, p),
        (q, v, p),
        (p, v, t),
        (p, q, v),
        (t, p, v),
        (v, p, q),
    ]
    rgb = np.empty(h.shape + (3,), dtype=np.float64)
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        rgb[sel, 0] = r[sel]
        rgb[sel, 1] = g[sel]
        rgb[sel, 2] = b[sel]
    return rgb


def shift_hue(img: ImageBuffer, delta: float) -> ImageBuffer:
    """Rotate hue by ``delta`` (fraction of the full circle, wraps)."""
    if not -0.5 <= delta <= 0.5:
        raise ValueError(f"hue delta must be in [-0.5, 0.5], got {delta}")
    rgb = img.pixels.astype(np.float64) / 255.0
    h, s, v = _rgb_to_hsv(rgb)
    h = (h + delta) % 1.0
    return ImageBuffer(to_uint8(_hsv_to_rgb(h, s, v) * 255.0))


def sample_color_jitter(
    rng: RngStream,
    with_hue: bool,
    factor_range: tuple[float, float] = (0.7, 1.3),
    hue_range: tuple[float, float] = (-0.1, 0.1),
) -> ColorJitterParams:
    """Draw jitter factors; hue is drawn only when ``with_hue`` is set.

    Draw order is saturation, contrast, brightness, then hue, matching the
    application order of :func:`apply_color_jitter`.
    """
    lo, hi = factor_range
    saturation = rng.uniform(lo, hi)
    contrast = rng.uniform(lo, hi)
    brightness = rng.uniform(lo, hi)
    hue = rng.uniform(hue_range[0], hue_range[1]) if with_hue else 0.0
    return ColorJitterParams(
        saturation_factor=saturation,
        contrast_factor=contrast,
        brightness_factor=brightness,
        hue_delta=hue,
    )


def apply_color_jitter(img: ImageBuffer, params: ColorJitterParams) -> ImageBuffer:
    """Apply saturation, contrast, brightness, then hue, in that fixed order."""
    out = adjust_saturation(img, params.saturation_factor)
    out = adjust_contrast(out, params.contrast_factor)
    out = adjust_brightness(out, params.brightness_factor)
    if params.hue_delta != 0.0:
        out = shift_hue(out, params.hue_delta)
    return out
