"""Disguise search campaigns: perturb, re-detect, and analyze coverage.

A campaign takes one baseline face detection, draws a fresh randomized
disguise over the face box on every iteration (each iteration owns RNG
substream i, so trials are independent and the whole report is a pure
function of image, model, and config), re-runs the detector, and records
which trials made the face disappear. Coverage of evading vs non-evading
trials is accumulated into per-pixel heatmaps over the face box and reduced
to densities over named key-point regions (brow, nose bridge, mouth,
jawline, forehead, cheeks).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cascade import CascadeModel, Detection, detect_multiscale
from .image import RasterImage, Rect, from_bytes, save_png
from .rng import SeededRng
from .shapes import (PerturbationConfig, Shape, apply_disguise, coverage_mask,
                     shape_from_dict, shape_to_dict)

REPORT_VERSION = 1


class NoBaselineFaceError(Exception):
    """The detector found no face to build the campaign around."""


class EmptyRegionError(Exception):
    """A key region rounds to zero pixels inside this face box."""


@dataclass(frozen=True)
class DetectorParams:
    scale_factor: float = 1.1
    min_neighbors: int = 3
    min_size: int = 30


@dataclass(frozen=True)
class CampaignConfig:
    iterations: int
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    detector: DetectorParams = field(default_factory=DetectorParams)
    success_iou: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.success_iou < 1.0:
            raise ValueError("success_iou must be in (0, 1)")


@dataclass(frozen=True)
class TrialRecord:
    index: int
    shapes: list[Shape]
    post_detections: list[Detection]
    evaded: bool


# Face-box-relative key regions (fractions of box width/height). These are a
# bounding-box heuristic for the densely landmarked areas; regions overlap.
KEY_REGIONS: dict[str, tuple[tuple[float, float, float, float], ...]] = {
    "brow": ((0.10, 0.18, 0.90, 0.34),),
    "nose_bridge": ((0.38, 0.25, 0.62, 0.60),),
    "mouth": ((0.25, 0.62, 0.75, 0.80),),
    "jawline": ((0.05, 0.80, 0.95, 1.00),),
    "forehead": ((0.15, 0.00, 0.85, 0.18),),
    "cheeks": ((0.05, 0.40, 0.30, 0.70), (0.70, 0.40, 0.95, 0.70)),
}

# Fig. 3/4-motivated contrast: landmark-dense band vs sparse surround.
DENSE_REGIONS = ("brow", "jawline", "mouth")
SPARSE_REGIONS = ("forehead", "cheeks")


@dataclass
class CampaignReport:
    baseline: Detection
    config: CampaignConfig
    trials: list[TrialRecord]
    evasion_rate: float
    success_heatmap: np.ndarray
    failure_heatmap: np.ndarray
    region_stats: dict[str, dict[str, float | None]]
    region_contrast: float | None


def iou(a: Rect, b: Rect) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.right, b.right) - max(a.x, b.x)
    iy = min(a.bottom, b.bottom) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def region_mask(blocks, w: int, h: int) -> np.ndarray:
    """Pixel mask of a fractional region spec inside a w x h face box."""
    mask = np.zeros((h, w), dtype=bool)
    for fx0, fy0, fx1, fy1 in blocks:
        x0, x1 = int(round(fx0 * w)), int(round(fx1 * w))
        y0, y1 = int(round(fy0 * h)), int(round(fy1 * h))
        mask[max(y0, 0):min(y1, h), max(x0, 0):min(x1, w)] = True
    return mask


def region_density(heatmap: np.ndarray, regions: dict, n_trials: int) -> dict[str, float]:
    """Mean per-pixel coverage rate of each region.

    density = (sum of heatmap counts over region pixels)
              / (region pixel count * n_trials), always in [0, 1].
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    h, w = heatmap.shape
    out = {}
    for name, blocks in regions.items():
        mask = region_mask(blocks, w, h)
        count = int(mask.sum())
        if count == 0:
            raise EmptyRegionError(f"region {name!r} has no pixels in a {w}x{h} box")
        out[name] = float(heatmap[mask].sum()) / (count * n_trials)
    return out


def _union_density(heatmap: np.ndarray, names, n_trials: int) -> float:
    h, w = heatmap.shape
    mask = np.zeros((h, w), dtype=bool)
    for name in names:
        mask |= region_mask(KEY_REGIONS[name], w, h)
    return float(heatmap[mask].sum()) / (int(mask.sum()) * n_trials)


def run_campaign(img: RasterImage, model: CascadeModel, cfg: CampaignConfig,
                 jobs: int = 1) -> CampaignReport:
    """Run the full perturb/re-detect loop and aggregate the outcome.

    The baseline face is the highest-weight detection; a trial counts as
    evaded when no post-perturbation detection overlaps the baseline box
    with IoU >= cfg.success_iou. Trials own RNG substream = iteration index
    and aggregation runs in index order, so jobs > 1 (thread pool) produces
    a report identical to the serial run.
    """
    det = cfg.detector
    baseline_dets = detect_multiscale(model, img, det.scale_factor,
                                      det.min_neighbors, det.min_size)
    if not baseline_dets:
        raise NoBaselineFaceError("no face detected in the baseline image")
    baseline = baseline_dets[0]
    face = baseline.rect

    def trial(i: int) -> TrialRecord:
        rng = SeededRng(cfg.seed, stream=i)
        perturbed, shapes = apply_disguise(img, face, cfg.perturbation, rng)
        dets = detect_multiscale(model, perturbed, det.scale_factor,
                                 det.min_neighbors, det.min_size)
        evaded = all(iou(d.rect, face) < cfg.success_iou for d in dets)
        return TrialRecord(i, shapes, dets, evaded)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(trial, range(cfg.iterations)))
    else:
        trials = [trial(i) for i in range(cfg.iterations)]

    success_heat = np.zeros((face.h, face.w), dtype=np.int64)
    failure_heat = np.zeros((face.h, face.w), dtype=np.int64)
    for t in trials:
        mask = coverage_mask(t.shapes, img.width, img.height)
        face_mask = mask[face.y:face.bottom, face.x:face.right]
        if t.evaded:
            success_heat += face_mask
        else:
            failure_heat += face_mask

    return _aggregate(baseline, cfg, trials, success_heat, failure_heat)


def _aggregate(baseline, cfg, trials, success_heat, failure_heat) -> CampaignReport:
    n_evading = sum(1 for t in trials if t.evaded)
    n_failing = len(trials) - n_evading
    evasion_rate = n_evading / len(trials)

    region_stats: dict[str, dict[str, float | None]] = {}
    ev = region_density(success_heat, KEY_REGIONS, n_evading) if n_evading else None
    fa = region_density(failure_heat, KEY_REGIONS, n_failing) if n_failing else None
    for name in KEY_REGIONS:
        region_stats[name] = {
            "evading": ev[name] if ev else None,
            "non_evading": fa[name] if fa else None,
        }

    region_contrast = None
    if n_evading:
        region_contrast = (_union_density(success_heat, DENSE_REGIONS, n_evading)
                           - _union_density(success_heat, SPARSE_REGIONS, n_evading))

    return CampaignReport(baseline, cfg, trials, evasion_rate,
                          success_heat, failure_heat, region_stats, region_contrast)


def sweep_opacity(img: RasterImage, model: CascadeModel, cfg: CampaignConfig,
                  opacity_levels: list[float]) -> dict[float, float]:
    """Evasion rate per opacity level with pairwise-identical geometry.

    Every level reuses cfg.seed and collapses the opacity range to the level
    value, so trial i draws the same shapes at every level and only their
    transparency differs.
    """
    rates = {}
    for level in opacity_levels:
        if not 0.0 <= level <= 1.0:
            raise ValueError("opacity levels must lie in [0, 1]")
        pert = PerturbationConfig(
            shapes_per_iteration=cfg.perturbation.shapes_per_iteration,
            size_range=cfg.perturbation.size_range,
            thickness_range=cfg.perturbation.thickness_range,
            opacity_range=(level, level),
            color_mode=cfg.perturbation.color_mode,
        )
        level_cfg = CampaignConfig(cfg.iterations, pert, cfg.detector,
                                   cfg.success_iou, cfg.seed)
        rates[level] = run_campaign(img, model, level_cfg).evasion_rate
    return rates


def report_to_dict(report: CampaignReport) -> dict:
    """Deterministic JSON-ready document (no timestamps, fixed key order)."""
    cfg = report.config
    return {
        "report_version": REPORT_VERSION,
        "config": {
            "iterations": cfg.iterations,
            "seed": cfg.seed,
            "success_iou": cfg.success_iou,
            "perturbation": {
                "shapes_per_iteration": cfg.perturbation.shapes_per_iteration,
                "size_range": list(cfg.perturbation.size_range),
                "thickness_range": list(cfg.perturbation.thickness_range),
                "opacity_range": list(cfg.perturbation.opacity_range),
                "color_mode": cfg.perturbation.color_mode,
            },
            "detector": {
                "scale_factor": cfg.detector.scale_factor,
                "min_neighbors": cfg.detector.min_neighbors,
                "min_size": cfg.detector.min_size,
            },
        },
        "baseline": _detection_to_dict(report.baseline),
        "trials": [
            {
                "index": t.index,
                "evaded": t.evaded,
                "shapes": [shape_to_dict(s) for s in t.shapes],
                "post_detections": [_detection_to_dict(d) for d in t.post_detections],
            }
            for t in report.trials
        ],
        "evasion_rate": report.evasion_rate,
        "success_heatmap": report.success_heatmap.ravel().tolist(),
        "failure_heatmap": report.failure_heatmap.ravel().tolist(),
        "heatmap_size": [report.success_heatmap.shape[1], report.success_heatmap.shape[0]],
        "region_stats": report.region_stats,
        "region_contrast": report.region_contrast,
    }


def report_to_json(report: CampaignReport) -> str:
    return json.dumps(report_to_dict(report), indent=1)


def _detection_to_dict(d: Detection) -> dict:
    return {"rect": [d.rect.x, d.rect.y, d.rect.w, d.rect.h],
            "neighbors": d.neighbors, "weight": d.weight}


def _detection_from_dict(d: dict) -> Detection:
    return Detection(Rect(*d["rect"]), d["neighbors"], d["weight"])


def verify_report(doc: dict) -> None:
    """Recompute every aggregate of a serialized report from its trials.

    Raises AssertionError on the first field that does not match exactly;
    used by tests and the CLI to prove report self-consistency.
    """
    w, h = doc["heatmap_size"]
    face = Rect(*doc["baseline"]["rect"])
    success = np.zeros((h, w), dtype=np.int64)
    failure = np.zeros((h, w), dtype=np.int64)
    n_evading = 0
    for t in doc["trials"]:
        shapes = [shape_from_dict(s) for s in t["shapes"]]
        base_dets = [_detection_from_dict(d) for d in t["post_detections"]]
        evaded = all(iou(d.rect, face) < doc["config"]["success_iou"] for d in base_dets)
        assert evaded == t["evaded"], f"trial {t['index']}: evaded flag mismatch"
        mask = coverage_mask(shapes, face.right, face.bottom)[face.y:, face.x:]
        if evaded:
            success += mask
            n_evading += 1
        else:
            failure += mask
    n_failing = len(doc["trials"]) - n_evading

    rate = n_evading / len(doc["trials"])
    assert rate == doc["evasion_rate"], "evasion_rate mismatch"
    assert success.ravel().tolist() == doc["success_heatmap"], "success_heatmap mismatch"
    assert failure.ravel().tolist() == doc["failure_heatmap"], "failure_heatmap mismatch"

    ev = region_density(success, KEY_REGIONS, n_evading) if n_evading else None
    fa = region_density(failure, KEY_REGIONS, n_failing) if n_failing else None
    for name in KEY_REGIONS:
        expect = {"evading": ev[name] if ev else None,
                  "non_evading": fa[name] if fa else None}
        assert doc["region_stats"][name] == expect, f"region_stats[{name}] mismatch"
    contrast = None
    if n_evading:
        contrast = (_union_density(success, DENSE_REGIONS, n_evading)
                    - _union_density(success, SPARSE_REGIONS, n_evading))
    assert doc["region_contrast"] == contrast, "region_contrast mismatch"


def render_heatmap_png(heatmap: np.ndarray, path) -> None:
    """Write the counts as a grayscale PNG, max count scaled to white."""
    peak = int(heatmap.max())
    if peak == 0:
        norm = np.zeros_like(heatmap, dtype=np.float64)
    else:
        norm = heatmap.astype(np.float64) / peak
    save_png(from_bytes(np.rint(norm * 255.0).astype(np.uint8)), path)
