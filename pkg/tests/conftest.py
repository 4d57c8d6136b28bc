import csv

import numpy as np
import pytest

from lesionaug import ImageBuffer, Sample, save_image


def rand_image(width: int, height: int, seed: int = 0) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    return ImageBuffer.from_array(rng.integers(0, 256, (height, width, 3), dtype=np.uint8))


def disk_sample(sid, width, height, cx, cy, radius, color, label, background=100, seed=None):
    """Sample with a filled disk mask; disk content optionally noisy."""
    yy, xx = np.mgrid[0:height, 0:width]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    img = np.full((height, width, 3), background, dtype=np.uint8)
    if seed is None:
        img[mask] = color
    else:
        rng = np.random.default_rng(seed)
        noisy = rng.integers(-30, 31, (int(mask.sum()), 3)) + np.asarray(color)
        img[mask] = np.clip(noisy, 0, 255).astype(np.uint8)
    return Sample(id=sid, image=ImageBuffer.from_array(img), mask=mask, label=label)


def write_dataset(root, n_records, size=(120, 100), with_masks=False, seed=0):
    """Write PNG fixtures plus a manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_records):
        w = size[0] + int(rng.integers(0, 16))
        h = size[1] + int(rng.integers(0, 16))
        arr = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        save_image(ImageBuffer.from_array(arr), root / f"im{i}.png")
        mask_name = ""
        if with_masks:
            mask = np.zeros((h, w), dtype=np.uint8)
            cx, cy = w // 2, h // 2
            r = min(w, h) // 4
            yy, xx = np.mgrid[0:h, 0:w]
            mask[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = 255
            from PIL import Image

            Image.fromarray(mask, mode="L").save(root / f"mask{i}.png")
            mask_name = f"mask{i}.png"
        rows.append([f"im{i}", f"im{i}.png", mask_name, i % 2])
    path = root / "manifest.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "image", "mask", "label"])
        writer.writerows(rows)
    return path


@pytest.fixture
def tiny_image():
    return rand_image(24, 18, seed=7)
