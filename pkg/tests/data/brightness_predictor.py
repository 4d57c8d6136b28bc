"""Test predictor: probability = mean pixel value / 255 of each image.

Reads one absolute image path per line on stdin, writes one probability
per line on stdout, flushed per line.
"""

import sys

import numpy as np
from PIL import Image


def main():
    for line in sys.stdin:
        path = line.strip()
        if not path:
            continue
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
        sys.stdout.write(f"{arr.mean() / 255.0:.8f}\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
