"""From-scratch Viola-Jones cascade face detector.

Parses the modern OpenCV cascade XML dialect (root element ``cascade``,
boosted stages of single-split Haar stumps), evaluates windows on integer
integral images with variance normalization, scans an image pyramid, and
groups the raw hits into final detections.

Feature evaluation convention (what the stump thresholds in the shipped
model files are calibrated against): the raw weighted rectangle sum is
divided by ``norm_area * sigma``, where sigma is the pixel standard
deviation over the window inset by one pixel on every side and norm_area is
that inset rectangle's area. Pixels enter this arithmetic as 8-bit integers
(round(v * 255)), which keeps every rectangle sum exact and the whole scan
bit-reproducible.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numba
import numpy as np

from .image import Layout, RasterImage, Rect, to_bytes, to_grayscale

GROUP_EPS = 0.2  # relative tolerance used when merging raw candidate windows


class CascadeError(Exception):
    """Base class for cascade model problems."""


class MissingCascadeError(CascadeError):
    """The cascade model file does not exist."""


class MalformedCascadeError(CascadeError):
    """The model file is not valid cascade XML."""


class LegacyCascadeError(CascadeError):
    """The model uses the legacy haar-classifier dialect."""


class DanglingFeatureError(MalformedCascadeError):
    """A weak classifier references a feature index outside the table."""


class UnsupportedCascadeError(CascadeError):
    """Valid cascade XML, but a variant this engine does not evaluate."""


@dataclass(frozen=True)
class HaarRect:
    x: int
    y: int
    w: int
    h: int
    weight: float


@dataclass(frozen=True)
class HaarFeature:
    rects: tuple[HaarRect, ...]
    tilted: bool


@dataclass(frozen=True)
class WeakClassifier:
    feature_index: int
    threshold: float
    fail_value: float
    pass_value: float


@dataclass(frozen=True)
class CascadeStage:
    stage_threshold: float
    classifiers: tuple[WeakClassifier, ...]


@dataclass(frozen=True)
class CascadeModel:
    window_w: int
    window_h: int
    stages: tuple[CascadeStage, ...]
    features: tuple[HaarFeature, ...]


@dataclass(frozen=True)
class Detection:
    """One grouped detection: box, merged-candidate count, summed stage score."""

    rect: Rect
    neighbors: int
    weight: float


def default_cascade_path() -> Path:
    """Path of the vendored frontal-face model."""
    return Path(resources.files("facecloak").joinpath("data/haarcascade_frontalface_alt.xml"))


def load_cascade(path) -> CascadeModel:
    p = Path(path)
    if not p.is_file():
        raise MissingCascadeError(f"cascade file not found: {p}")
    return parse_cascade(p.read_bytes())


def parse_cascade(model_text) -> CascadeModel:
    """Parse modern OpenCV cascade XML into a fully resolved model.

    Raises LegacyCascadeError for the old haar-classifier dialect (convert the
    file with OpenCV before use), MalformedCascadeError for broken XML or
    inconsistent tables, and UnsupportedCascadeError for non-HAAR features,
    tilted features, or multi-split trees.
    """
    try:
        root = ET.fromstring(model_text)
    except ET.ParseError as exc:
        raise MalformedCascadeError(f"not valid cascade XML: {exc}") from exc

    cascade = None
    for child in root.iter():
        type_id = child.get("type_id", "")
        if type_id == "opencv-haar-classifier":
            raise LegacyCascadeError(
                "legacy haar-classifier model; convert it to the modern "
                "cascade dialect (root element 'cascade') before loading"
            )
        if type_id == "opencv-cascade-classifier" or child.tag == "cascade":
            cascade = child
            break
    if cascade is None:
        raise MalformedCascadeError("no <cascade> element found")

    def field(name: str) -> str:
        el = cascade.find(name)
        if el is None or el.text is None:
            raise MalformedCascadeError(f"cascade is missing <{name}>")
        return el.text.strip()

    stage_type = field("stageType")
    if stage_type != "BOOST":
        raise UnsupportedCascadeError(f"unsupported stageType {stage_type!r}")
    feature_type = field("featureType")
    if feature_type != "HAAR":
        raise UnsupportedCascadeError(
            f"unsupported featureType {feature_type!r}; only HAAR cascades are evaluated"
        )
    window_w = int(field("width"))
    window_h = int(field("height"))
    if window_w < 1 or window_h < 1:
        raise MalformedCascadeError("non-positive base window size")

    features_el = cascade.find("features")
    if features_el is None:
        raise MalformedCascadeError("cascade is missing <features>")
    features = []
    for fe in features_el.findall("_"):
        rects_el = fe.find("rects")
        if rects_el is None:
            raise MalformedCascadeError("feature without <rects>")
        rects = []
        for re_ in rects_el.findall("_"):
            parts = (re_.text or "").split()
            if len(parts) != 5:
                raise MalformedCascadeError(f"bad feature rect {re_.text!r}")
            x, y, w, h = (int(v) for v in parts[:4])
            rects.append(HaarRect(x, y, w, h, float(parts[4])))
        if not 2 <= len(rects) <= 3:
            raise MalformedCascadeError(f"feature has {len(rects)} rects, expected 2-3")
        for r in rects:
            if r.x < 0 or r.y < 0 or r.x + r.w > window_w or r.y + r.h > window_h:
                raise MalformedCascadeError(
                    f"feature rect ({r.x},{r.y},{r.w},{r.h}) escapes the "
                    f"{window_w}x{window_h} base window"
                )
        tilted_el = fe.find("tilted")
        tilted = tilted_el is not None and (tilted_el.text or "0").strip() not in ("0", "")
        if tilted:
            raise UnsupportedCascadeError("tilted features are not supported")
        features.append(HaarFeature(tuple(rects), tilted))

    stages_el = cascade.find("stages")
    if stages_el is None:
        raise MalformedCascadeError("cascade is missing <stages>")
    stages = []
    for se in stages_el.findall("_"):
        thr_el = se.find("stageThreshold")
        weak_el = se.find("weakClassifiers")
        if thr_el is None or thr_el.text is None or weak_el is None:
            raise MalformedCascadeError("stage missing threshold or classifiers")
        classifiers = []
        for we in weak_el.findall("_"):
            internal = we.find("internalNodes")
            leaves = we.find("leafValues")
            if internal is None or internal.text is None or leaves is None or leaves.text is None:
                raise MalformedCascadeError("weak classifier missing nodes or leaves")
            node = internal.text.split()
            leaf = leaves.text.split()
            if len(node) != 4 or len(leaf) != 2:
                raise UnsupportedCascadeError(
                    "only single-split stump classifiers are supported"
                )
            left, right, feat_idx = int(node[0]), int(node[1]), int(node[2])
            if (left, right) != (0, -1):
                raise UnsupportedCascadeError(
                    f"unexpected stump leaf wiring ({left}, {right})"
                )
            if not 0 <= feat_idx < len(features):
                raise DanglingFeatureError(
                    f"feature index {feat_idx} outside table of {len(features)}"
                )
            classifiers.append(
                WeakClassifier(feat_idx, float(node[3]), float(leaf[0]), float(leaf[1]))
            )
        if not classifiers:
            raise MalformedCascadeError("stage with no weak classifiers")
        stages.append(CascadeStage(float(thr_el.text), tuple(classifiers)))
    if not stages:
        raise MalformedCascadeError("cascade has no stages")

    return CascadeModel(window_w, window_h, tuple(stages), tuple(features))


def _quantize_gray(img: RasterImage) -> np.ndarray:
    """Grayscale uint8 view of any image, shape (H, W)."""
    gray = img if img.layout is Layout.GRAY else to_grayscale(img)
    return to_bytes(gray)[:, :, 0]


class IntegralImage:
    """Integer cumulative-sum grids over the 8-bit quantization of a gray image.

    Both grids carry a zero top row and left column, so the sum over a rect
    is always four lookups. Working on round(v * 255) integers keeps those
    sums exact: the four-lookup value equals a brute-force loop bit for bit.
    """

    def __init__(self, sums: np.ndarray, sq_sums: np.ndarray):
        self.sums = sums
        self.sq_sums = sq_sums
        self.height = sums.shape[0] - 1
        self.width = sums.shape[1] - 1

    @classmethod
    def from_image(cls, img: RasterImage) -> "IntegralImage":
        if img.layout is not Layout.GRAY:
            raise ValueError("integral images are built from grayscale input")
        return cls.from_bytes(_quantize_gray(img))

    @classmethod
    def from_bytes(cls, g8: np.ndarray) -> "IntegralImage":
        h, w = g8.shape
        px = g8.astype(np.int64)
        sums = np.zeros((h + 1, w + 1), dtype=np.int64)
        sq = np.zeros((h + 1, w + 1), dtype=np.int64)
        np.cumsum(np.cumsum(px, axis=0), axis=1, out=sums[1:, 1:])
        np.cumsum(np.cumsum(px * px, axis=0), axis=1, out=sq[1:, 1:])
        sums.setflags(write=False)
        sq.setflags(write=False)
        return cls(sums, sq)

    def _sum4(self, grid: np.ndarray, x: int, y: int, w: int, h: int) -> int:
        return int(grid[y + h, x + w] - grid[y, x + w] - grid[y + h, x] + grid[y, x])

    def rect_sum(self, x: int, y: int, w: int, h: int) -> int:
        """Sum of quantized intensities over [x, x+w) x [y, y+h)."""
        return self._sum4(self.sums, x, y, w, h)

    def rect_sq_sum(self, x: int, y: int, w: int, h: int) -> int:
        return self._sum4(self.sq_sums, x, y, w, h)


def _inv_norm_scalar(ii: IntegralImage, x: int, y: int, w: int, h: int) -> float:
    """1 / (norm_area * sigma) over the 1-px inset rect; clamped when sigma ~ 0."""
    nx, ny, nw, nh = x + 1, y + 1, w - 2, h - 2
    area = nw * nh
    vs = ii.rect_sum(nx, ny, nw, nh)
    vq = ii.rect_sq_sum(nx, ny, nw, nh)
    nf = area * vq - vs * vs
    if nf > 0:
        return 1.0 / float(np.sqrt(float(nf)))
    # sigma below 1e-6 intensity units: substitute sigma = 1.0 (i.e. 255 bytes)
    return 1.0 / (area * 255.0)


def evaluate_window(model: CascadeModel, ii: IntegralImage, window: Rect,
                    scale: float = 1.0) -> tuple[bool, float]:
    """Run the full cascade on one window.

    Returns (passed, score) where score is the stump-output sum of the last
    stage that was evaluated. `scale` stretches the model's rects onto a
    window `scale` times the base size (coordinates rounded per rect);
    pyramid scans always call this math at scale 1 on a resized image.
    """
    if window.x < 0 or window.y < 0 or window.right > ii.width or window.bottom > ii.height:
        raise ValueError("window escapes the integral image")
    sw = int(round(model.window_w * scale))
    sh = int(round(model.window_h * scale))
    if window.w != sw or window.h != sh:
        raise ValueError(f"window is {window.w}x{window.h}, expected {sw}x{sh} at scale {scale}")

    inv = _inv_norm_scalar(ii, window.x, window.y, window.w, window.h)
    score = 0.0
    for stage in model.stages:
        total = 0.0
        for stump in stage.classifiers:
            feat = model.features[stump.feature_index]
            raw = 0.0
            for r in feat.rects:
                rx = window.x + int(round(r.x * scale))
                ry = window.y + int(round(r.y * scale))
                rw = int(round(r.w * scale))
                rh = int(round(r.h * scale))
                raw += r.weight * ii.rect_sum(rx, ry, rw, rh)
            if raw * inv < stump.threshold:
                total += stump.fail_value
            else:
                total += stump.pass_value
        score = total
        if total < stage.stage_threshold:
            return False, score
    return True, score


class _CompiledCascade:
    """Flat ndarray form of a model for the vectorized pyramid scan."""

    def __init__(self, model: CascadeModel):
        self.window_w = model.window_w
        self.window_h = model.window_h
        n = sum(len(s.classifiers) for s in model.stages)
        self.rx = np.zeros((n, 3), dtype=np.int64)
        self.ry = np.zeros((n, 3), dtype=np.int64)
        self.rw = np.zeros((n, 3), dtype=np.int64)
        self.rh = np.zeros((n, 3), dtype=np.int64)
        self.wgt = np.zeros((n, 3), dtype=np.float64)
        self.nrects = np.zeros(n, dtype=np.int64)
        self.thr = np.zeros(n, dtype=np.float64)
        self.leaf0 = np.zeros(n, dtype=np.float64)
        self.leaf1 = np.zeros(n, dtype=np.float64)
        self.stage_start = np.zeros(len(model.stages), dtype=np.int64)
        self.stage_end = np.zeros(len(model.stages), dtype=np.int64)
        self.stage_thr = np.zeros(len(model.stages), dtype=np.float64)
        i = 0
        for si, stage in enumerate(model.stages):
            self.stage_start[si] = i
            for stump in stage.classifiers:
                feat = model.features[stump.feature_index]
                for k, r in enumerate(feat.rects):
                    self.rx[i, k], self.ry[i, k] = r.x, r.y
                    self.rw[i, k], self.rh[i, k] = r.w, r.h
                    self.wgt[i, k] = r.weight
                self.nrects[i] = len(feat.rects)
                self.thr[i] = stump.threshold
                self.leaf0[i] = stump.fail_value
                self.leaf1[i] = stump.pass_value
                i += 1
            self.stage_end[si] = i
            self.stage_thr[si] = stage.stage_threshold


@lru_cache(maxsize=8)
def _compile(model: CascadeModel) -> _CompiledCascade:
    return _CompiledCascade(model)


def _resize_halfpixel(img: RasterImage, new_w: int, new_h: int) -> RasterImage:
    """Bilinear resample with half-pixel-center mapping, edge clamped.

    Pyramid levels use this convention (dst pixel j samples (j + 0.5) * scale
    - 0.5) because the common detector runtimes do; reproducing their level
    pixels keeps grouped detections aligned with reference fixtures. The
    public corner-aligned resize stays in image.resize_bilinear.
    """
    sx = img.width / new_w
    sy = img.height / new_h
    xs = np.clip((np.arange(new_w) + 0.5) * sx - 0.5, 0, img.width - 1)
    ys = np.clip((np.arange(new_h) + 0.5) * sy - 0.5, 0, img.height - 1)
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


@numba.njit(cache=True, nogil=True)
def _scan_kernel(sums, sq_sums, win_w, win_h, rx, ry, rw, rh, wgt, nrects,
                 thr, leaf0, leaf1, stage_start, stage_end, stage_thr):
    """Step-1 sliding-window cascade over one integral image.

    Scalar loops with per-window early stage exit; all arithmetic is plain
    int64/float64, so results are bit-identical to evaluate_window.
    """
    h = sums.shape[0] - 1
    w = sums.shape[1] - 1
    nx = w - win_w
    ny = h - win_h
    area = (win_w - 2) * (win_h - 2)
    n_stages = stage_start.shape[0]

    out_x = np.empty(nx * ny, np.int64)
    out_y = np.empty(nx * ny, np.int64)
    out_s = np.empty(nx * ny, np.float64)
    count = 0
    for y in range(ny):
        for x in range(nx):
            x0 = x + 1
            y0 = y + 1
            x1 = x + win_w - 1
            y1 = y + win_h - 1
            vs = sums[y1, x1] - sums[y0, x1] - sums[y1, x0] + sums[y0, x0]
            vq = sq_sums[y1, x1] - sq_sums[y0, x1] - sq_sums[y1, x0] + sq_sums[y0, x0]
            nf = area * vq - vs * vs
            if nf > 0:
                inv = 1.0 / np.sqrt(np.float64(nf))
            else:
                inv = 1.0 / (area * 255.0)
            passed = True
            score = 0.0
            for si in range(n_stages):
                total = 0.0
                for s in range(stage_start[si], stage_end[si]):
                    raw = 0.0
                    for k in range(nrects[s]):
                        ax = x + rx[s, k]
                        ay = y + ry[s, k]
                        bx = ax + rw[s, k]
                        by = ay + rh[s, k]
                        rs = sums[by, bx] - sums[ay, bx] - sums[by, ax] + sums[ay, ax]
                        raw += wgt[s, k] * rs
                    if raw * inv < thr[s]:
                        total += leaf0[s]
                    else:
                        total += leaf1[s]
                score = total
                if total < stage_thr[si]:
                    passed = False
                    break
            if passed:
                out_x[count] = x
                out_y[count] = y
                out_s[count] = score
                count += 1
    return out_x[:count], out_y[:count], out_s[:count]


def _scan_level(comp: _CompiledCascade, g8: np.ndarray):
    """All accepted window origins and scores at one pyramid level, step 1 px."""
    h, w = g8.shape
    if w - comp.window_w <= 0 or h - comp.window_h <= 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64)
    ii = IntegralImage.from_bytes(g8)
    return _scan_kernel(ii.sums, ii.sq_sums, comp.window_w, comp.window_h,
                        comp.rx, comp.ry, comp.rw, comp.rh, comp.wgt, comp.nrects,
                        comp.thr, comp.leaf0, comp.leaf1,
                        comp.stage_start, comp.stage_end, comp.stage_thr)


def detect_multiscale(model: CascadeModel, img: RasterImage, scale_factor: float = 1.1,
                      min_neighbors: int = 3, min_size: int = 0) -> list[Detection]:
    """Multi-scale face scan: image pyramid, window grouping, sorted output.

    The image is repeatedly downscaled by scale_factor (each level resampled
    from the original) and scanned exhaustively at the model's base window
    size; accepted windows are mapped back to original coordinates and merged
    with group_rectangles. Results come back sorted by descending weight,
    ties broken by (y, x). Deterministic: identical inputs give identical
    output lists.
    """
    if scale_factor <= 1.0:
        raise ValueError("scale_factor must be > 1")
    comp = _compile(model)
    gray = to_grayscale(img) if img.layout is not Layout.GRAY else img

    rects: list[Rect] = []
    scores: list[float] = []
    factor = 1.0
    while True:
        win_w = round(model.window_w * factor)
        win_h = round(model.window_h * factor)
        sw = round(img.width / factor)
        sh = round(img.height / factor)
        if sw - model.window_w <= 0 or sh - model.window_h <= 0:
            break
        if win_w > img.width or win_h > img.height:
            break
        if win_w >= min_size and win_h >= min_size:
            level = gray if (sw, sh) == (img.width, img.height) else _resize_halfpixel(gray, sw, sh)
            xs, ys, sc = _scan_level(comp, to_bytes(level)[:, :, 0])
            for x, y, s in zip(xs.tolist(), ys.tolist(), sc.tolist()):
                rects.append(Rect(round(x * factor), round(y * factor), win_w, win_h))
                scores.append(s)
        factor *= scale_factor

    found = group_rectangles(rects, min_neighbors, GROUP_EPS, scores)
    found.sort(key=lambda d: (-d.weight, d.rect.y, d.rect.x))
    return found


def _similar(a: np.ndarray, eps: float) -> np.ndarray:
    """Pairwise relative-tolerance similarity of (n, 4) xywh boxes."""
    x, y, w, h = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    delta = eps * 0.5 * (np.minimum.outer(w, w) + np.minimum.outer(h, h))

    def close(v):
        return np.abs(np.subtract.outer(v, v)) <= delta

    return close(x) & close(y) & close(x + w) & close(y + h)


def group_rectangles(candidates: list[Rect], min_neighbors: int, eps: float = GROUP_EPS,
                     scores: list[float] | None = None) -> list[Detection]:
    """Merge similar candidate boxes into detections.

    Boxes whose positions and sizes differ by at most eps (relative) cluster
    transitively; clusters with fewer than min_neighbors + 1 members are
    dropped as noise, the rest are reported at the per-coordinate mean box
    with neighbors = cluster size and weight = sum of member scores. A kept
    cluster nested inside a stronger kept cluster is suppressed.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    n = len(candidates)
    if n == 0:
        return []
    if scores is None:
        scores = [0.0] * n
    if min_neighbors <= 0:
        return [Detection(r, 1, s) for r, s in zip(candidates, scores)]

    arr = np.array([[r.x, r.y, r.w, r.h] for r in candidates], dtype=np.float64)
    sim = _similar(arr, eps)

    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    ii, jj = np.nonzero(np.triu(sim, k=1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)

    merged = []  # (mean_rect, count, weight) in first-member order
    for root in sorted(clusters, key=lambda r: min(clusters[r])):
        members = clusters[root]
        cnt = len(members)
        sums = arr[members].sum(axis=0)
        mean = Rect(*(int(round(v / cnt)) for v in sums))
        merged.append((mean, cnt, sum(scores[i] for i in members)))

    result = []
    for i, (r1, n1, w1) in enumerate(merged):
        if n1 <= min_neighbors:
            continue
        nested = False
        for j, (r2, n2, _) in enumerate(merged):
            if j == i or n2 <= min_neighbors:
                continue
            dx = int(round(r2.w * eps))
            dy = int(round(r2.h * eps))
            if (r1.x >= r2.x - dx and r1.y >= r2.y - dy
                    and r1.right <= r2.right + dx and r1.bottom <= r2.bottom + dy
                    and (n2 > max(3, n1) or n1 < 3)):
                nested = True
                break
        if not nested:
            result.append(Detection(r1, n1, w1))
    return result
