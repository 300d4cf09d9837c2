"""Image representation and PNG I/O.

All pixel data lives in NumPy float64 arrays normalized to [0, 1], shaped
(height, width, channels) and channel-interleaved in RGB order. Quantization
to 8-bit happens only at the PNG boundary: a stored value v maps to the byte
round(v * 255) (ties to even), and a loaded byte b maps back to b / 255.

Every operation here is pure: inputs are never mutated and outputs are fresh
images backed by write-protected arrays, so they are safe to share across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageError(Exception):
    """Base class for image loading/saving failures."""


class MissingFileError(ImageError):
    """The requested image file does not exist."""


class UnsupportedFormatError(ImageError):
    """The file exists but is not a raster format this toolkit reads."""


class Layout(Enum):
    GRAY = "gray"
    RGB = "rgb"
    RGBA = "rgba"

    @property
    def channels(self) -> int:
        return {Layout.GRAY: 1, Layout.RGB: 3, Layout.RGBA: 4}[self]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned box with a top-left pixel origin."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"rect must have positive size, got {self.w}x{self.h}")

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def clip_to(self, width: int, height: int) -> "Rect | None":
        """Intersection with the image rectangle, or None if empty."""
        x0 = max(self.x, 0)
        y0 = max(self.y, 0)
        x1 = min(self.right, width)
        y1 = min(self.bottom, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return Rect(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class RasterImage:
    """Immutable raster image with normalized float pixels.

    pixels has shape (height, width, channels) and dtype float64; the array
    is write-protected after construction.
    """

    width: int
    height: int
    layout: Layout
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        expect = (self.height, self.width, self.layout.channels)
        if self.pixels.shape != expect:
            raise ValueError(f"pixel shape {self.pixels.shape} != {expect}")
        if self.pixels.dtype != np.float64:
            raise ValueError("pixels must be float64")
        lo = float(self.pixels.min())
        hi = float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities out of [0, 1]: min={lo}, max={hi}")
        self.pixels.setflags(write=False)

    @property
    def channels(self) -> int:
        return self.layout.channels

    @classmethod
    def from_array(cls, arr: np.ndarray, layout: Layout | None = None) -> "RasterImage":
        """Wrap a (H, W) or (H, W, C) float array, copying it."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise ValueError("expected a 2-D or 3-D array")
        if layout is None:
            layout = {1: Layout.GRAY, 3: Layout.RGB, 4: Layout.RGBA}.get(a.shape[2])
            if layout is None:
                raise ValueError(f"cannot infer layout from {a.shape[2]} channels")
        return cls(a.shape[1], a.shape[0], layout, a.copy())


def to_bytes(img: RasterImage) -> np.ndarray:
    """Quantize to uint8 with round-half-to-even, shape (H, W, C)."""
    return np.rint(img.pixels * 255.0).astype(np.uint8)


def from_bytes(arr: np.ndarray, layout: Layout | None = None) -> RasterImage:
    """Build an image from uint8 data, mapping byte b to b / 255."""
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        raise ValueError("expected uint8 data")
    return RasterImage.from_array(a.astype(np.float64) / 255.0, layout)


_PIL_LAYOUTS = {"L": Layout.GRAY, "RGB": Layout.RGB, "RGBA": Layout.RGBA}


def load_image(path) -> RasterImage:
    """Load a PNG (or JPEG) into a RasterImage, preserving alpha if present.

    Raises MissingFileError for absent paths and UnsupportedFormatError for
    files Pillow cannot identify or bit depths outside 8-bit.
    """
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"image file not found: {p}")
    try:
        with Image.open(p) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise UnsupportedFormatError(
                    f"{p}: {mode} (high bit depth) images are not supported"
                )
            if mode not in _PIL_LAYOUTS:
                # palette / LA / CMYK collapse to the nearest supported layout
                has_alpha = mode in ("LA", "PA") or (
                    mode == "P" and "transparency" in im.info
                )
                im = im.convert("RGBA" if has_alpha else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"not a readable raster file: {p}") from exc
    except OSError as exc:
        raise UnsupportedFormatError(f"corrupt or truncated image: {p}") from exc
    return from_bytes(arr, _PIL_LAYOUTS[im.mode])


def save_png(img: RasterImage, path) -> None:
    """Write an 8-bit PNG (to a path or file object); RGBA is stored as
    straight (non-premultiplied) alpha."""
    data = to_bytes(img)
    mode = {Layout.GRAY: "L", Layout.RGB: "RGB", Layout.RGBA: "RGBA"}[img.layout]
    if img.layout is Layout.GRAY:
        data = data[:, :, 0]
    sink = path if hasattr(path, "write") else Path(path)
    try:
        Image.fromarray(data, mode=mode).save(sink, format="PNG")
    except OSError as exc:
        raise ImageError(f"failed to write PNG {path}: {exc}") from exc


_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


def to_grayscale(img: RasterImage) -> RasterImage:
    """BT.601 luma: gray = 0.299 R + 0.587 G + 0.114 B. Alpha is ignored."""
    if img.layout is Layout.GRAY:
        return RasterImage(img.width, img.height, Layout.GRAY, img.pixels.copy())
    gray = img.pixels[:, :, :3] @ _GRAY_WEIGHTS
    # the weights sum to 1.0 but rounding can leave values a hair outside [0,1]
    gray = np.clip(gray, 0.0, 1.0)
    return RasterImage(img.width, img.height, Layout.GRAY, gray[:, :, None])


def flatten_alpha(img: RasterImage, background=(1.0, 1.0, 1.0)) -> RasterImage:
    """Composite over a constant background: out = a * src + (1 - a) * bg.

    This is how an alpha-aware viewer presents the image to a human.
    """
    if img.layout is not Layout.RGBA:
        raise ValueError("flatten_alpha requires an RGBA image")
    bg = np.asarray(background, dtype=np.float64).reshape(1, 1, 3)
    alpha = img.pixels[:, :, 3:4]
    out = alpha * img.pixels[:, :, :3] + (1.0 - alpha) * bg
    return RasterImage(img.width, img.height, Layout.RGB, np.clip(out, 0.0, 1.0))


def drop_alpha(img: RasterImage) -> RasterImage:
    """Discard the alpha channel, returning the RGB layer verbatim.

    This is what a pipeline that flattens PNGs into plain RGB tensors sees.
    """
    if img.layout is not Layout.RGBA:
        raise ValueError("drop_alpha requires an RGBA image")
    return RasterImage(img.width, img.height, Layout.RGB, img.pixels[:, :, :3].copy())


def resize_bilinear(img: RasterImage, new_w: int, new_h: int) -> RasterImage:
    """Bilinear resampling with corner-aligned sampling.

    Output pixel j samples source coordinate j * (src - 1) / (dst - 1), so the
    first and last samples coincide with the source edges; a single-pixel axis
    samples coordinate 0.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError("target size must be >= 1")
    if new_w == img.width and new_h == img.height:
        return RasterImage(img.width, img.height, img.layout, img.pixels.copy())

    def axis_coords(dst: int, src: int) -> np.ndarray:
        if dst == 1:
            return np.zeros(1)
        return np.arange(dst) * ((src - 1) / (dst - 1))

    xs = axis_coords(new_w, img.width)
    ys = axis_coords(new_h, img.height)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]

    p = img.pixels
    top = p[y0[:, None], x0[None, :], :] * (1 - fx) + p[y0[:, None], x1[None, :], :] * fx
    bot = p[y1[:, None], x0[None, :], :] * (1 - fx) + p[y1[:, None], x1[None, :], :] * fx
    out = top * (1 - fy) + bot * fy
    return RasterImage(new_w, new_h, img.layout, np.clip(out, 0.0, 1.0))
