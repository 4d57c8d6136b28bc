"""Lesion mix: composite a mask-cut foreground lesion into a background image.

The foreground is cropped to its mask bounding box, downscaled if it would
dominate the background, histogram-matched against the background lesion
pixels, then alpha-composited with a Gaussian-feathered mask at the center
of the background lesion's bounding box.  The melanoma label of the result
is the logical OR of the two source labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .imgcore import ImageBuffer, RngStream, Sample, bilinear_resize, resize_mask_nearest, to_uint8

__all__ = ["MixParams", "histogram_match", "apply_lut", "lesion_mix"]


@dataclass(frozen=True)
class MixParams:
    """Compositing policy.

    ``feather_sigma`` is the Gaussian sigma (pixels) applied to the binary
    alpha mask; when None it defaults to ``feather_frac`` of the (scaled)
    foreground bounding-box diagonal, with a floor of ``feather_min_px``.
    The foreground is downscaled when its bounding box exceeds ``scale_cap``
    of the background's shorter side.
    """

    feather_sigma: float | None = None
    feather_frac: float = 0.02
    feather_min_px: float = 1.0
    scale_cap: float = 0.9

    def __post_init__(self):
        if self.feather_sigma is not None and self.feather_sigma < 1.0:
            raise ValueError("feather_sigma must be >= 1 pixel")
        if not 0.0 < self.scale_cap <= 1.0:
            raise ValueError("scale_cap must be in (0, 1]")


def _match_channel(src_vals: np.ndarray, ref_vals: np.ndarray) -> np.ndarray:
    src_cum = np.cumsum(np.bincount(src_vals, minlength=256), dtype=np.int64)
    ref_cum = np.cumsum(np.bincount(ref_vals, minlength=256), dtype=np.int64)
    # LUT[v] = smallest r with CDF_ref(r) >= CDF_src(v); compared exactly
    # through integer cross products to avoid float-equality edge cases.
    lut = np.searchsorted(ref_cum * src_cum[-1], src_cum * ref_cum[-1], side="left")
    return lut.astype(np.uint8)


def histogram_match(source_pixels: np.ndarray, reference_pixels: np.ndarray) -> np.ndarray:
    """Classical CDF matching; returns a (3, 256) per-channel lookup table."""
    src = np.asarray(source_pixels)
    ref = np.asarray(reference_pixels)
    if src.size == 0 or ref.size == 0:
        raise ValueError("histogram matching requires non-empty pixel multisets")
    if src.ndim != 2 or src.shape[1] != 3 or ref.ndim != 2 or ref.shape[1] != 3:
        raise ValueError("expected (N, 3) pixel multisets")
    return np.stack([_match_channel(src[:, c], ref[:, c]) for c in range(3)])


def apply_lut(pixels: np.ndarray, lut: np.ndarray) -> np.ndarray:
    """Apply a (3, 256) lookup table to (..., 3) uint8 pixels."""
    out = np.empty_like(pixels)
    for c in range(3):
        out[..., c] = lut[c][pixels[..., c]]
    return out


def _mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def lesion_mix(
    background: Sample,
    foreground: Sample,
    rng: RngStream,
    params: MixParams = MixParams(),
) -> Sample:
    """Insert the foreground lesion into the background image.

    Placement is deterministic (the background lesion's bounding-box center);
    randomness enters only through partner selection upstream, so ``rng`` is
    accepted for interface uniformity but not drawn from.
    """
    if background.mask is None or foreground.mask is None:
        raise ValueError("lesion mix requires masks on both samples")

    bg = background.image.pixels
    bg_h, bg_w = bg.shape[:2]

    # 1. cut the foreground lesion at its mask bounding box
    fx0, fy0, fx1, fy1 = _mask_bbox(foreground.mask)
    fg_img = foreground.image.pixels[fy0:fy1, fx0:fx1]
    fg_mask = foreground.mask[fy0:fy1, fx0:fx1]
    box_w, box_h = fx1 - fx0, fy1 - fy0

    # 2. cap the size relative to the background's shorter side
    limit = params.scale_cap * min(bg_w, bg_h)
    if max(box_w, box_h) > limit:
        scale = limit / max(box_w, box_h)
        new_w = max(1, round(box_w * scale))
        new_h = max(1, round(box_h * scale))
        fg_img = bilinear_resize(fg_img, new_w, new_h)
        fg_mask = resize_mask_nearest(fg_mask, new_w, new_h)
        if not fg_mask.any():
            fg_mask = np.ones_like(fg_mask)  # degenerate downscale: keep the crop
        box_w, box_h = new_w, new_h

    sigma = params.feather_sigma
    if sigma is None:
        sigma = max(params.feather_min_px, params.feather_frac * math.hypot(box_w, box_h))

    # 3. pad so the feathered edge can decay to zero inside the patch
    margin = int(math.ceil(4.0 * sigma))
    fg_img = np.pad(fg_img, ((margin, margin), (margin, margin), (0, 0)), mode="edge")
    fg_mask = np.pad(fg_mask, margin, mode="constant", constant_values=False)
    patch_h, patch_w = fg_mask.shape

    # 4. equalize the lesion colors against the background lesion region
    lut = histogram_match(
        fg_img[fg_mask].reshape(-1, 3), bg[background.mask].reshape(-1, 3)
    )
    fg_img = apply_lut(fg_img, lut)

    # 5. feathered alpha from the binary mask
    alpha = np.clip(gaussian_filter(fg_mask.astype(np.float64), sigma, mode="constant"), 0.0, 1.0)

    # 6. composite centered on the background lesion's bounding box
    bx0, by0, bx1, by1 = _mask_bbox(background.mask)
    cx, cy = (bx0 + bx1) // 2, (by0 + by1) // 2
    px = min(max(cx - patch_w // 2, 0), max(bg_w - patch_w, 0))
    py = min(max(cy - patch_h // 2, 0), max(bg_h - patch_h, 0))
    # trim the patch if it is larger than the background
    tw = min(patch_w, bg_w - px)
    th = min(patch_h, bg_h - py)
    fg_img = fg_img[:th, :tw]
    fg_mask = fg_mask[:th, :tw]
    alpha = alpha[:th, :tw][..., None]

    out = bg.astype(np.float64).copy()
    region = out[py : py + th, px : px + tw]
    out[py : py + th, px : px + tw] = alpha * fg_img.astype(np.float64) + (1.0 - alpha) * region

    out_mask = background.mask.copy()
    out_mask[py : py + th, px : px + tw] |= fg_mask

    return Sample(
        id=f"{background.id}+{foreground.id}",
        image=ImageBuffer(to_uint8(out)),
        mask=out_mask,
        label=background.label or foreground.label,
    )
