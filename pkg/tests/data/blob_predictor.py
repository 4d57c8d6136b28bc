"""Test predictor: probability = fraction of red-dominant pixels.

Scores the class-colored blob content of the synthetic two-class dataset:
pixels with R exceeding B by a margin count toward the melanoma score.
Line protocol: one absolute image path in, one probability out, flushed.
"""

import sys

import numpy as np
from PIL import Image


def score(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.int64)
    red_dominant = (arr[..., 0] - arr[..., 2]) > 40
    return red_dominant.mean()


def main():
    for line in sys.stdin:
        path = line.strip()
        if not path:
            continue
        sys.stdout.write(f"{score(path):.8f}\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
