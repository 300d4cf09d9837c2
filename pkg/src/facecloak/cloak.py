"""Dual-layer alpha-transparency cloak.

Optimizes a per-pixel alpha field so that compositing the stored RGB layer
over white reproduces a target face (the human view) while the RGB layer
itself holds a half-intensity disguised image (the machine view). Viewers
that honor alpha see the face; pipelines that drop or flatten the alpha
channel see only the disguise.

The per-pixel problem is the scalar quadratic
    minimize (alpha * b + (1 - alpha) * w - t)^2,   alpha in [0, 1]
whose clamped closed-form minimizer (w - t) / (w - b) serves as the
independent oracle for the Adam loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cascade import CascadeModel, Detection, detect_multiscale
from .image import (Layout, RasterImage, drop_alpha, flatten_alpha, load_image,
                    resize_bilinear, save_png, to_grayscale)


@dataclass(frozen=True)
class CloakConfig:
    steps: int = 1000
    learning_rate: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    background_scale: float = 0.5
    white_level: float = 1.0
    log_interval: int = 100
    working_size: int = 256

    def __post_init__(self):
        if not 0.0 < self.background_scale < self.white_level:
            raise ValueError("require 0 < background_scale < white_level")
        if self.steps < 1 or self.learning_rate <= 0.0 or self.log_interval < 1:
            raise ValueError("steps, learning_rate, log_interval must be positive")
        if self.working_size < 1:
            raise ValueError("working_size must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class CloakResult:
    alpha: np.ndarray
    loss_trace: list[tuple[int, float]]
    final_mse: float
    background_scaled: np.ndarray
    target: np.ndarray


@dataclass
class CloakVerification:
    human_detections: list[Detection]
    machine_detections: list[Detection]
    psnr: float | None


def _check_dims(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def blend(alpha: np.ndarray, background: np.ndarray, white_level: float = 1.0) -> np.ndarray:
    """Per pixel: alpha * background + (1 - alpha) * white_level."""
    _check_dims(alpha, background)
    return alpha * background + (1.0 - alpha) * white_level


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error over all elements (row-major pairwise reduction)."""
    _check_dims(a, b)
    return float(np.mean((a - b) ** 2))


def alpha_gradient(alpha: np.ndarray, background: np.ndarray, target: np.ndarray,
                   white_level: float = 1.0) -> np.ndarray:
    """d(mse)/d(alpha): (2 / N) * (blend - target) * (background - white)."""
    _check_dims(alpha, background, target)
    n = alpha.size
    return (2.0 / n) * (blend(alpha, background, white_level) - target) * (background - white_level)


def closed_form_alpha(target: np.ndarray, background_scaled: np.ndarray,
                      white_level: float = 1.0) -> np.ndarray:
    """Independent per-pixel minimizer: clamp((w - t) / (w - b)) to [0, 1].

    Degenerate pixels with |w - b| < 1e-9 get alpha 0 (any alpha blends to
    the same value there).
    """
    _check_dims(target, background_scaled)
    denom = white_level - background_scaled
    safe = np.where(np.abs(denom) < 1e-9, 1.0, denom)
    alpha = np.where(np.abs(denom) < 1e-9, 0.0, (white_level - target) / safe)
    return np.clip(alpha, 0.0, 1.0)


def preprocess(img: RasterImage, size: int) -> np.ndarray:
    """Grayscale (size, size) float array, the optimizer's working form."""
    gray = to_grayscale(img)
    if (gray.width, gray.height) != (size, size):
        gray = resize_bilinear(gray, size, size)
    return gray.pixels[:, :, 0].copy()


def optimize_alpha(target: RasterImage, background_raw: RasterImage,
                   cfg: CloakConfig = CloakConfig()) -> CloakResult:
    """Fit the alpha field with Adam, projecting onto [0, 1] after each step.

    Both images are converted to grayscale at cfg.working_size; the
    background is scaled by cfg.background_scale before blending, which keeps
    every background pixel bounded away from white. Alpha starts at all-ones.
    Loss is logged every log_interval steps plus once after the last step.
    """
    t = preprocess(target, cfg.working_size)
    b = preprocess(background_raw, cfg.working_size) * cfg.background_scale
    _check_dims(t, b)
    w = cfg.white_level

    alpha = np.ones_like(t)
    state = AdamState(np.zeros_like(t), np.zeros_like(t))
    trace: list[tuple[int, float]] = []
    for step in range(cfg.steps):
        current = blend(alpha, b, w)
        if step % cfg.log_interval == 0:
            trace.append((step, mse(current, t)))
        g = (2.0 / alpha.size) * (current - t) * (b - w)
        state.t += 1
        state.m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * g
        state.v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * g * g
        m_hat = state.m / (1.0 - cfg.adam_beta1 ** state.t)
        v_hat = state.v / (1.0 - cfg.adam_beta2 ** state.t)
        alpha = alpha - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
        alpha = np.clip(alpha, 0.0, 1.0)
    final = mse(blend(alpha, b, w), t)
    trace.append((cfg.steps, final))
    return CloakResult(alpha, trace, final, b, t)


def export_cloak(background_scaled: np.ndarray, alpha: np.ndarray, path) -> None:
    """Write the RGBA cloak PNG: RGB = scaled background, A = alpha.

    Straight (non-premultiplied) alpha, so dropping the alpha channel
    recovers the machine-visible disguised layer bit for bit.
    """
    _check_dims(background_scaled, alpha)
    if alpha.min() < 0.0 or alpha.max() > 1.0:
        raise ValueError("alpha values must lie in [0, 1]")
    h, w = alpha.shape
    rgba = np.empty((h, w, 4), dtype=np.float64)
    rgba[:, :, 0] = background_scaled
    rgba[:, :, 1] = background_scaled
    rgba[:, :, 2] = background_scaled
    rgba[:, :, 3] = alpha
    save_png(RasterImage(w, h, Layout.RGBA, rgba), path)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / err)


def verify_cloak(path, model: CascadeModel, scale_factor: float = 1.1,
                 min_neighbors: int = 3, min_size: int = 30,
                 reference: np.ndarray | None = None) -> CloakVerification:
    """Detect faces in both renderings of an exported cloak.

    The human view is the PNG flattened over white; the machine view is the
    PNG with alpha dropped. When a reference array (the optimizer's float
    blend) is supplied, the human view's grayscale PSNR against it is
    reported as quantization-survival evidence.
    """
    img = load_image(path)
    if img.layout is not Layout.RGBA:
        raise ValueError(f"cloak must be an RGBA PNG, got {img.layout.value}")
    human = flatten_alpha(img, (1.0, 1.0, 1.0))
    machine = drop_alpha(img)
    human_dets = detect_multiscale(model, human, scale_factor, min_neighbors, min_size)
    machine_dets = detect_multiscale(model, machine, scale_factor, min_neighbors, min_size)
    quality = None
    if reference is not None:
        human_gray = to_grayscale(human).pixels[:, :, 0]
        _check_dims(human_gray, reference)
        quality = psnr(human_gray, reference)
    return CloakVerification(human_dets, machine_dets, quality)
