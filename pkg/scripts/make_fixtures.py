#!/usr/bin/env python3
"""Regenerate the test fixture images in tests/fixtures/.

Sources are public-domain sample photos bundled with scikit-image (astronaut:
NASA photo of Eileen Collins; chelsea: CC0 cat photo) and matplotlib (Grace
Hopper portrait, US government work), plus seeded synthetic no-face images.
Grayscale parity fixtures go through the package's own BT.601 conversion so
the detector-parity corpus is exactly what the engine sees.

The committed reference_detections.json is produced separately by running
scripts/refdetect.cpp (OpenCV's CascadeClassifier) over the parity PNGs; see
tests/fixtures/README.md.
"""
import pathlib
import sys

import numpy as np
from PIL import Image

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

import matplotlib.cbook  # noqa: E402
import skimage.data  # noqa: E402

import facecloak.image as fi  # noqa: E402

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def save_gray(rgb_u8: np.ndarray, name: str) -> None:
    img = fi.from_bytes(np.ascontiguousarray(rgb_u8))
    fi.save_png(fi.to_grayscale(img), FIXTURES / "parity" / f"{name}.png")


def main() -> None:
    (FIXTURES / "parity").mkdir(parents=True, exist_ok=True)

    astro = skimage.data.astronaut()
    hopper_path = matplotlib.cbook.get_sample_data("grace_hopper.jpg", asfileobj=False)
    hopper = np.asarray(Image.open(hopper_path).convert("RGB"))
    chelsea = skimage.data.chelsea()

    # detector-parity corpus: grayscale portraits and no-face images
    save_gray(astro, "astronaut")
    save_gray(astro[:, ::-1], "astronaut_flip")
    save_gray(hopper, "hopper")
    h = fi.from_bytes(hopper)
    small = fi.resize_bilinear(h, round(h.width * 0.72), round(h.height * 0.72))
    fi.save_png(fi.to_grayscale(small), FIXTURES / "parity" / "hopper_small.png")
    save_gray(astro[0:260, 100:360], "astronaut_crop")

    rng = np.random.default_rng(20240517)
    noise = rng.integers(0, 256, size=(256, 256, 3), dtype=np.uint8)
    save_gray(noise, "noise")
    save_gray(chelsea, "chelsea")
    ramp = np.linspace(0, 255, 320)
    grad = np.tile(ramp[None, :], (240, 1))
    save_gray(np.stack([grad] * 3, axis=-1).astype(np.uint8), "gradient")

    # color fixtures for the perturbation campaign and cloak pipeline
    portrait = fi.from_bytes(np.ascontiguousarray(astro[0:260, 100:360]))
    fi.save_png(portrait, FIXTURES / "portrait.png")
    fi.save_png(fi.from_bytes(np.ascontiguousarray(noise)), FIXTURES / "noise_rgb.png")
    print(f"fixtures written under {FIXTURES}")


if __name__ == "__main__":
    main()
