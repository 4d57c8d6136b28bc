"""Core image types, preprocessing, manifest I/O and deterministic RNG streams.

Everything downstream (color / geometric / elastic transforms, the batch
pipeline and the evaluation harness) works on the small set of value types
defined here.  All types are immutable after construction and all functions
are pure, so they are safe to share across worker threads.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.random import Generator, Philox
from PIL import Image

__all__ = [
    "ImageBuffer",
    "NormalizedTensor",
    "Sample",
    "ManifestRecord",
    "Manifest",
    "ManifestError",
    "RngStream",
    "derive_stream",
    "load_manifest",
    "save_manifest",
    "load_image",
    "save_image",
    "load_mask",
    "load_sample",
    "resize_max_side",
    "resize_to",
    "bilinear_resize",
    "resize_mask_nearest",
    "normalize",
    "denormalize",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
]

# Channel statistics the networks in this domain are pretrained with.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MANIFEST_HEADER = ("id", "image", "mask", "label")


class ManifestError(ValueError):
    """Raised for malformed manifest files or rows."""


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageBuffer:
    """Owned 8-bit RGB raster, row-major (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image dimensions must be >= 1")
        px.flags.writeable = False

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 3

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        return cls(np.ascontiguousarray(arr, dtype=np.uint8).copy())

    @classmethod
    def full(cls, width: int, height: int, color: Sequence[int]) -> "ImageBuffer":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:] = np.asarray(color, dtype=np.uint8)
        return cls(arr)

    def to_array(self) -> np.ndarray:
        """Writable copy of the pixel data."""
        return self.pixels.copy()


@dataclass(frozen=True)
class NormalizedTensor:
    """Real-valued (H, W, 3) image produced by :func:`normalize`."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise ValueError("normalized tensor contains non-finite values")
        d.flags.writeable = False

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Sample:
    """One dataset item: image, optional binary mask, melanoma label."""

    id: str
    image: ImageBuffer
    mask: np.ndarray | None = None
    label: bool = False

    def __post_init__(self):
        if self.mask is not None:
            m = self.mask
            if m.dtype != np.bool_:
                raise ValueError(f"mask must be boolean, got {m.dtype}")
            if m.shape != (self.image.height, self.image.width):
                raise ValueError(
                    f"mask shape {m.shape} does not match image "
                    f"{(self.image.height, self.image.width)}"
                )
            if not m.any():
                raise ValueError("mask has no foreground pixels")
            m.flags.writeable = False


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image_path: str
    mask_path: str | None
    label: bool


@dataclass(frozen=True)
class Manifest:
    records: tuple[ManifestRecord, ...]
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "validation", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate ids in manifest")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


# ---------------------------------------------------------------------------
# deterministic RNG streams
# ---------------------------------------------------------------------------

_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass
class RngStream:
    """Counter-based random stream keyed by (seed, sample id, copy, stage).

    Wraps a Philox generator whose 128-bit key is a hash of the identifying
    tuple, so draws are reproducible regardless of thread count or the order
    in which streams are consumed.
    """

    key: int
    stream_id: int
    counter: int = 0
    _gen: Generator = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self._gen is None:
            self._gen = Generator(Philox(key=self.stream_id))

    def random(self, size=None):
        self.counter += int(np.prod(size)) if size is not None else 1
        out = self._gen.random(size)
        return out if size is not None else float(out)

    def uniform(self, low: float, high: float, size=None):
        self.counter += int(np.prod(size)) if size is not None else 1
        out = self._gen.uniform(low, high, size)
        return out if size is not None else float(out)

    def integers(self, low: int, high: int, size=None, endpoint: bool = False, dtype=np.int64):
        self.counter += int(np.prod(size)) if size is not None else 1
        out = self._gen.integers(low, high, size=size, endpoint=endpoint, dtype=dtype)
        return out if size is not None else int(out)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        self.counter += size
        return self._gen.choice(n, size=size, replace=replace)


def derive_stream(
    global_seed: int, sample_id: str, copy_index: int, stage_index: int
) -> RngStream:
    """Derive an independent stream for one (sample, copy, stage) triple.

    The 128-bit stream id is a blake2b hash of the tuple, so distinct
    tuples collide with negligible probability and the same tuple always
    reproduces the same sequence.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(b"lesionaug.stream.v1\x00")
    h.update(struct.pack("<Q", global_seed & _MASK64))
    h.update(sample_id.encode("utf-8"))
    h.update(b"\x00")
    h.update(struct.pack("<qq", copy_index, stage_index))
    stream_id = int.from_bytes(h.digest(), "little")
    return RngStream(key=global_seed & _MASK64, stream_id=stream_id)


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------


def load_manifest(path: str | Path, split: str = "train") -> Manifest:
    """Read a ``id,image,mask,label`` CSV into a :class:`Manifest`.

    Row order is preserved.  ``mask`` may be empty; ``label`` must be 0 or 1.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(
                f"bad manifest header {header!r}, expected {','.join(MANIFEST_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            rid, image, mask, label = (c.strip() for c in row)
            if not rid:
                raise ManifestError(f"{path}:{lineno}: empty id")
            if label not in ("0", "1"):
                raise ManifestError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            records.append(
                ManifestRecord(
                    id=rid,
                    image_path=image,
                    mask_path=mask or None,
                    label=label == "1",
                )
            )
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ManifestError(f"duplicate id {dup!r} in {path}")
    return Manifest(records=tuple(records), split=split)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.id, r.image_path, r.mask_path or "", int(r.label)])


# ---------------------------------------------------------------------------
# image I/O
# ---------------------------------------------------------------------------


def load_image(path: str | Path) -> ImageBuffer:
    """Read a PNG or JPEG as RGB (gray replicated, alpha dropped)."""
    with Image.open(path) as im:
        return ImageBuffer.from_array(np.asarray(im.convert("RGB")))


def save_image(img: ImageBuffer, path: str | Path) -> None:
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale mask; foreground is value >= 128."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def load_sample(
    record: ManifestRecord, base_dir: str | Path, max_side: int | None = 1024
) -> Sample:
    """Load a manifest record, resolving paths against ``base_dir``.

    Images larger than ``max_side`` on their longest side are downscaled on
    load, mirroring the offline preprocessing step; the mask is resampled to
    the image dimensions with nearest-neighbor when that happens.
    """
    base = Path(base_dir)
    img = load_image(base / record.image_path)
    if max_side is not None:
        img = resize_max_side(img, max_side)
    mask = None
    if record.mask_path is not None:
        mask = load_mask(base / record.mask_path)
        if mask.shape != (img.height, img.width):
            mask = resize_mask_nearest(mask, img.width, img.height)
    return Sample(id=record.id, image=img, mask=mask, label=record.label)


def resize_mask_nearest(mask: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = mask.shape
    ys = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(np.int64)
    xs = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(np.int64)
    return mask[np.ix_(ys, xs)]


# ---------------------------------------------------------------------------
# bilinear sampling core (shared by resize, affine and elastic warps)
# ---------------------------------------------------------------------------


def reflect_coords(x: np.ndarray, n: int) -> np.ndarray:
    """Fold continuous coordinates into [-0.5, n - 0.5] by symmetric reflection.

    The mirror sits on the half-pixel boundary, so coordinate -1 maps to
    pixel 0 and coordinate n maps to pixel n - 1.  In-range coordinates are
    returned unchanged (exactly), which keeps identity warps bit-exact.
    """
    if n == 1:
        return np.zeros_like(x)
    period = 2.0 * n
    t = np.remainder(x + 0.5, period)
    t = np.where(t > n, period - t, t)
    return t - 0.5


def bilinear_sample(
    arr: np.ndarray, xs: np.ndarray, ys: np.ndarray, reflect: bool = False
) -> np.ndarray:
    """Sample ``arr`` (H, W[, C]) at continuous pixel coordinates.

    Out-of-range coordinates are either clamped to the edge (default) or
    resolved by symmetric reflection padding when ``reflect`` is set.
    Returns float64 values; callers round and cast.
    """
    h, w = arr.shape[:2]
    work = arr.astype(np.float64, copy=False)
    if reflect:
        xs = reflect_coords(np.asarray(xs, dtype=np.float64), w)
        ys = reflect_coords(np.asarray(ys, dtype=np.float64), h)
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = xs - x0f
    fy = ys - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    if work.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    tl = work[y0c, x0c]
    tr = work[y0c, x1c]
    bl = work[y1c, x0c]
    br = work[y1c, x1c]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return top + (bot - top) * fy


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half-to-even, clamp to [0, 255] and cast."""
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _grid_coords(out_len: int, in_len: int) -> np.ndarray:
    # Half-pixel-center mapping: identical sizes give exact identity.
    return (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5


def _axis_lerp_indices(out_len: int, in_len: int):
    coords = _grid_coords(out_len, in_len)
    lo = np.floor(coords)
    frac = coords - lo
    lo = lo.astype(np.int64)
    return np.clip(lo, 0, in_len - 1), np.clip(lo + 1, 0, in_len - 1), frac


def bilinear_resize(pixels: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    # Separable x-then-y interpolation; same arithmetic as the joint gather.
    h, w = pixels.shape[:2]
    if (out_w, out_h) == (w, h):
        return pixels.copy()
    work = pixels.astype(np.float64)
    x0, x1, fx = _axis_lerp_indices(out_w, w)
    rows = work[:, x0]
    rows += (work[:, x1] - rows) * fx[None, :, None]
    y0, y1, fy = _axis_lerp_indices(out_h, h)
    out = rows[y0]
    out += (rows[y1] - out) * fy[:, None, None]
    return to_uint8(out)


# ---------------------------------------------------------------------------
# resizing and normalization
# ---------------------------------------------------------------------------


def resize_max_side(img: ImageBuffer, max_side: int) -> ImageBuffer:
    """Shrink so the longest side equals ``max_side``; no-op if already within."""
    if max_side < 1:
        raise ValueError("max_side must be >= 1")
    w, h = img.width, img.height
    longest = max(w, h)
    if longest <= max_side:
        return img
    scale = max_side / longest
    if w >= h:
        out_w, out_h = max_side, max(1, round(h * scale))
    else:
        out_w, out_h = max(1, round(w * scale)), max_side
    return ImageBuffer(bilinear_resize(img.pixels, out_w, out_h))


def resize_to(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Bilinear stretch to exactly (out_w, out_h); aspect is not preserved."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    return ImageBuffer(bilinear_resize(img.pixels, out_w, out_h))


def normalize(
    img: ImageBuffer,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
) -> NormalizedTensor:
    """Per-channel ``(v / 255 - mean) / std``."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (3,) or std.shape != (3,):
        raise ValueError("mean and std must have 3 components")
    if (std <= 0).any():
        raise ValueError("std components must be positive")
    data = (img.pixels.astype(np.float64) / 255.0 - mean) / std
    return NormalizedTensor(data.astype(np.float32))


def denormalize(
    tensor: NormalizedTensor,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
) -> np.ndarray:
    """Inverse of :func:`normalize`; returns float64 values in [0, 1] scale."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    return tensor.data.astype(np.float64) * std + mean
