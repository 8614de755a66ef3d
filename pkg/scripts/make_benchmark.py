"""Regenerate the bundled benchmark pair under src/nnfield/data/.

Source: the NASA astronaut portrait (public domain) shipped with
scikit-image. The reference is the 96x96 window with the highest mean
gradient magnitude on a 16-pixel grid; the ground-truth HR crop is its
centred 64x64 sub-window and the LR image is that crop bicubic-downsampled
by 4.
"""
from pathlib import Path

import numpy as np
from skimage import data

from nnfield.io import read_image, write_image
from nnfield.tensor import bicubic_resize

OUT = Path(__file__).resolve().parents[1] / "src" / "nnfield" / "data"


def main():
    img = data.astronaut() / 255.0
    gray = img.mean(axis=2)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gy, gx)
    best, where = -1.0, None
    for y in range(0, img.shape[0] - 96 + 1, 16):
        for x in range(0, img.shape[1] - 96 + 1, 16):
            score = mag[y:y + 96, x:x + 96].mean()
            if score > best:
                best, where = score, (y, x)
    y, x = where
    OUT.mkdir(parents=True, exist_ok=True)
    write_image(OUT / "bench_ref.ppm", img[y:y + 96, x:x + 96])
    ref = read_image(OUT / "bench_ref.ppm")
    hr = ref[16:80, 16:80]
    write_image(OUT / "bench_hr.ppm", hr)
    write_image(OUT / "bench_lr.ppm", bicubic_resize(hr, 16, 16))
    print(f"reference window at {where}, mean gradient {best:.4f}")


if __name__ == "__main__":
    main()
