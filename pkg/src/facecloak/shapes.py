"""Randomized cosmetic shapes and their rasterization.

Four shape classes (rectangle, circle, triangle, line) are drawn with
seeded-random position, size, color, thickness, fill state, and opacity,
constrained to a detected face box. Rasterization is hard-edged (no
anti-aliasing) over pixel centers, which keeps every perturbed image
bit-identical across platforms for a given (seed, stream, config).

A shape's coverage predicate is shared between rasterize and coverage_mask:
a pixel is covered when its center (px + 0.5, py + 0.5) satisfies the
kind-specific geometry test and lies inside the shape's clip region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .image import Layout, RasterImage, Rect
from .rng import SeededRng


class ShapeKind(Enum):
    RECTANGLE = "rectangle"
    CIRCLE = "circle"
    TRIANGLE = "triangle"
    LINE = "line"


@dataclass(frozen=True)
class Shape:
    """One drawn shape; geometry is kind-specific (see random_shape)."""

    kind: ShapeKind
    geometry: tuple[float, ...]
    color: tuple[float, float, float]
    opacity: float
    thickness: float
    filled: bool
    clip: Rect | None = None

    def __post_init__(self):
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError("opacity must be in [0, 1]")
        if self.thickness < 1.0:
            raise ValueError("thickness must be >= 1")
        n_expected = {ShapeKind.RECTANGLE: 4, ShapeKind.CIRCLE: 3,
                      ShapeKind.TRIANGLE: 6, ShapeKind.LINE: 4}[self.kind]
        if len(self.geometry) != n_expected:
            raise ValueError(f"{self.kind.value} geometry needs {n_expected} values")


@dataclass(frozen=True)
class PerturbationConfig:
    shapes_per_iteration: int = 15
    size_range: tuple[float, float] = (0.05, 0.60)
    thickness_range: tuple[float, float] = (1.0, 8.0)
    opacity_range: tuple[float, float] = (1.0, 1.0)
    color_mode: str = "uniform_random_rgb"

    def __post_init__(self):
        if self.shapes_per_iteration < 1:
            raise ValueError("shapes_per_iteration must be >= 1")
        for name in ("size_range", "thickness_range", "opacity_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.size_range[0] <= 0:
            raise ValueError("size_range must be positive")
        if self.thickness_range[0] < 1:
            raise ValueError("thickness_range must start at >= 1 px")
        if not (0.0 <= self.opacity_range[0] and self.opacity_range[1] <= 1.0):
            raise ValueError("opacity_range must lie in [0, 1]")
        if self.color_mode not in ("uniform_random_rgb", "grayscale_tones"):
            raise ValueError(f"unknown color_mode {self.color_mode!r}")


_KINDS = (ShapeKind.RECTANGLE, ShapeKind.CIRCLE, ShapeKind.TRIANGLE, ShapeKind.LINE)


def random_shape(rng: SeededRng, face: Rect, cfg: PerturbationConfig) -> Shape:
    """Draw one shape with uniformly random attributes inside the face box.

    Geometry by kind (anchor is uniform inside the face box, characteristic
    size s is a uniform fraction of the box's smaller dimension):
      rectangle  (x, y, w, h), centered on the anchor, w and h drawn separately
      circle     (cx, cy, r) with diameter s
      triangle   three vertices inside the axis-aligned square of side s
                 centered on the anchor
      line       anchor plus a second endpoint at distance s and uniform angle

    Attribute draw order is fixed (kind, anchor, geometry, color, opacity,
    thickness, fill), so two configs differing only in a range consume the
    random stream identically; that is what makes paired opacity sweeps
    compare the same geometry.
    """
    kind = _KINDS[rng.below(4)]
    ax = rng.uniform(face.x, face.x + face.w)
    ay = rng.uniform(face.y, face.y + face.h)
    dim = min(face.w, face.h)

    def size() -> float:
        return dim * rng.uniform(*cfg.size_range)

    if kind is ShapeKind.RECTANGLE:
        w, h = size(), size()
        geometry = (ax - w / 2.0, ay - h / 2.0, w, h)
    elif kind is ShapeKind.CIRCLE:
        geometry = (ax, ay, size() / 2.0)
    elif kind is ShapeKind.TRIANGLE:
        s = size()
        pts = []
        for _ in range(3):
            pts.append(ax + (rng.random() - 0.5) * s)
            pts.append(ay + (rng.random() - 0.5) * s)
        geometry = tuple(pts)
    else:
        s = size()
        theta = rng.uniform(0.0, 2.0 * np.pi)
        geometry = (ax, ay, ax + s * np.cos(theta), ay + s * np.sin(theta))

    if cfg.color_mode == "uniform_random_rgb":
        color = (rng.random(), rng.random(), rng.random())
    else:
        tone = rng.random()
        color = (tone, tone, tone)
    opacity = rng.uniform(*cfg.opacity_range)
    thickness = rng.uniform(*cfg.thickness_range)
    filled = rng.random() < 0.5
    return Shape(kind, geometry, color, opacity, thickness, filled, clip=face)


def _bbox(shape: Shape) -> tuple[float, float, float, float]:
    """Conservative (x0, y0, x1, y1) bounds of the covered region."""
    g = shape.geometry
    pad = 0.0 if shape.filled and shape.kind is not ShapeKind.LINE else shape.thickness / 2.0
    if shape.kind is ShapeKind.RECTANGLE:
        x0, y0, w, h = g
        return x0 - pad, y0 - pad, x0 + w + pad, y0 + h + pad
    if shape.kind is ShapeKind.CIRCLE:
        cx, cy, r = g
        return cx - r - pad, cy - r - pad, cx + r + pad, cy + r + pad
    xs, ys = g[0::2], g[1::2]
    return min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad


def _segment_dist_sq(px, py, x1, y1, x2, y2):
    """Squared distance from pixel centers to the segment (vectorized)."""
    dx, dy = x2 - x1, y2 - y1
    len_sq = dx * dx + dy * dy
    if len_sq == 0.0:
        return (px - x1) ** 2 + (py - y1) ** 2
    t = np.clip(((px - x1) * dx + (py - y1) * dy) / len_sq, 0.0, 1.0)
    return (px - x1 - t * dx) ** 2 + (py - y1 - t * dy) ** 2


def _mask_region(shape: Shape, width: int, height: int):
    """(y slice, x slice, bool mask) of covered pixels, or None if empty."""
    x0f, y0f, x1f, y1f = _bbox(shape)
    x0, y0 = max(int(np.floor(x0f)), 0), max(int(np.floor(y0f)), 0)
    x1, y1 = min(int(np.ceil(x1f)) + 1, width), min(int(np.ceil(y1f)) + 1, height)
    if shape.clip is not None:
        x0, y0 = max(x0, shape.clip.x), max(y0, shape.clip.y)
        x1, y1 = min(x1, shape.clip.right), min(y1, shape.clip.bottom)
    if x1 <= x0 or y1 <= y0:
        return None

    px = np.arange(x0, x1, dtype=np.float64)[None, :] + 0.5
    py = np.arange(y0, y1, dtype=np.float64)[:, None] + 0.5
    g = shape.geometry
    t2 = shape.thickness / 2.0

    if shape.kind is ShapeKind.RECTANGLE:
        rx, ry, rw, rh = g
        if shape.filled:
            mask = (px >= rx) & (px < rx + rw) & (py >= ry) & (py < ry + rh)
        else:
            outer = (px >= rx - t2) & (px < rx + rw + t2) & (py >= ry - t2) & (py < ry + rh + t2)
            inner = (px >= rx + t2) & (px < rx + rw - t2) & (py >= ry + t2) & (py < ry + rh - t2)
            mask = outer & ~inner
    elif shape.kind is ShapeKind.CIRCLE:
        cx, cy, r = g
        d2 = (px - cx) ** 2 + (py - cy) ** 2
        if shape.filled:
            mask = d2 <= r * r
        else:
            lo = max(r - t2, 0.0)
            mask = (d2 >= lo * lo) & (d2 <= (r + t2) ** 2)
    elif shape.kind is ShapeKind.TRIANGLE:
        x1_, y1_, x2_, y2_, x3_, y3_ = g
        d1 = (px - x1_) * (y2_ - y1_) - (py - y1_) * (x2_ - x1_)
        d2 = (px - x2_) * (y3_ - y2_) - (py - y2_) * (x3_ - x2_)
        d3 = (px - x3_) * (y1_ - y3_) - (py - y3_) * (x1_ - x3_)
        if shape.filled:
            mask = ((d1 >= 0) & (d2 >= 0) & (d3 >= 0)) | ((d1 <= 0) & (d2 <= 0) & (d3 <= 0))
        else:
            tt = t2 * t2
            mask = (_segment_dist_sq(px, py, x1_, y1_, x2_, y2_) <= tt)
            mask |= _segment_dist_sq(px, py, x2_, y2_, x3_, y3_) <= tt
            mask |= _segment_dist_sq(px, py, x3_, y3_, x1_, y1_) <= tt
    else:
        mask = _segment_dist_sq(px, py, *g) <= t2 * t2

    if not mask.any():
        return None
    return slice(y0, y1), slice(x0, x1), mask


def rasterize(img: RasterImage, shape: Shape) -> RasterImage:
    """Blend one shape onto a copy: out = opacity * color + (1 - opacity) * under.

    Hard-edged coverage; never touches pixels outside the shape's clipped
    bounding box. On RGBA input only the color channels are painted.
    """
    if img.layout is Layout.GRAY:
        raise ValueError("rasterize expects an RGB or RGBA image")
    out = img.pixels.copy()
    region = _mask_region(shape, img.width, img.height)
    if region is not None and shape.opacity > 0.0:
        ys, xs, mask = region
        color = np.asarray(shape.color, dtype=np.float64)
        window = out[ys, xs, :3]
        window[mask] = shape.opacity * color + (1.0 - shape.opacity) * window[mask]
    return RasterImage(img.width, img.height, img.layout, out)


def apply_disguise(img: RasterImage, face: Rect, cfg: PerturbationConfig,
                   rng: SeededRng) -> tuple[RasterImage, list[Shape]]:
    """Draw cfg.shapes_per_iteration random shapes over the face box.

    Returns the perturbed copy and the generated shapes in draw order (the
    campaign's record of the attempt).
    """
    shapes = [random_shape(rng, face, cfg) for _ in range(cfg.shapes_per_iteration)]
    out = img
    for shape in shapes:
        out = rasterize(out, shape)
    return out, shapes


def coverage_mask(shapes: list[Shape], canvas_w: int, canvas_h: int) -> np.ndarray:
    """Boolean (canvas_h, canvas_w) array: True where any shape covers the pixel.

    Uses the same coverage predicate as rasterize but ignores color/opacity.
    """
    mask = np.zeros((canvas_h, canvas_w), dtype=bool)
    for shape in shapes:
        region = _mask_region(shape, canvas_w, canvas_h)
        if region is not None:
            ys, xs, m = region
            mask[ys, xs] |= m
    return mask


def shape_to_dict(shape: Shape) -> dict:
    """JSON-ready form; floats round-trip exactly through repr."""
    d = {
        "kind": shape.kind.value,
        "geometry": list(shape.geometry),
        "color": list(shape.color),
        "opacity": shape.opacity,
        "thickness": shape.thickness,
        "filled": shape.filled,
    }
    if shape.clip is not None:
        d["clip"] = [shape.clip.x, shape.clip.y, shape.clip.w, shape.clip.h]
    return d


def shape_from_dict(d: dict) -> Shape:
    clip = Rect(*d["clip"]) if "clip" in d else None
    return Shape(ShapeKind(d["kind"]), tuple(d["geometry"]), tuple(d["color"]),
                 d["opacity"], d["thickness"], d["filled"], clip)
