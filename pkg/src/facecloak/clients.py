"""Uniform detector interface: local cascade engine or a remote HTTP service.

The remote client speaks a generic JSON protocol (base64 PNG in a
configurable request field, face boxes at a configurable response path), so
one implementation covers BetaFace-style providers through per-provider
config rather than hardcoded schemas. API keys come only from environment
variables. All tests run against an in-repo stub server; nothing here
touches the public internet during testing.
"""

from __future__ import annotations

import base64
import io
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Protocol

import requests

from .cascade import CascadeModel, Detection, detect_multiscale
from .campaign import DetectorParams
from .image import Layout, RasterImage, Rect, drop_alpha, flatten_alpha, load_image, save_png


class RemoteDetectorError(Exception):
    """Base class for remote-detection failures."""


class RemoteAuthError(RemoteDetectorError):
    """Missing API key or a 401/403 response."""


class RemoteHTTPError(RemoteDetectorError):
    """Non-2xx response that is not an auth failure."""


class RemoteTimeoutError(RemoteDetectorError):
    """The provider did not answer within the configured budget."""


class RemoteParseError(RemoteDetectorError):
    """The provider answered, but not in the configured shape."""


class PayloadTooLargeError(RemoteDetectorError):
    """Encoded image exceeds the provider's size limit."""


class DetectorInterface(Protocol):
    def detect(self, img: RasterImage) -> list[Detection]: ...


@dataclass(frozen=True)
class RemoteDetectorConfig:
    endpoint: str
    api_key_env: str | None = None
    auth_header: str = "Authorization"
    timeout: float = 30.0
    max_retries: int = 2
    backoff_base: float = 1.0
    max_payload_bytes: int = 4 * 1024 * 1024
    image_field: str = "image"
    faces_path: str = "faces"
    box_fields: tuple[str, str, str, str] = ("x", "y", "width", "height")
    confidence_field: str | None = "confidence"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


# global cap on concurrent remote calls, respecting provider rate limits
_MAX_IN_FLIGHT = 2
_inflight = threading.Semaphore(_MAX_IN_FLIGHT)


def _encode_png_base64(img: RasterImage, limit: int) -> str:
    buf = io.BytesIO()
    save_png(img, buf)
    data = buf.getvalue()
    if len(data) > limit:
        raise PayloadTooLargeError(f"encoded PNG is {len(data)} bytes, limit {limit}")
    return base64.b64encode(data).decode("ascii")


def _walk_path(doc, path: str):
    node = doc
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise RemoteParseError(f"response has no field {path!r}")
        node = node[part]
    return node


def _parse_response(doc, cfg: RemoteDetectorConfig, width: int, height: int) -> list[Detection]:
    faces = _walk_path(doc, cfg.faces_path)
    if not isinstance(faces, list):
        raise RemoteParseError(f"{cfg.faces_path!r} is not a list")
    out = []
    for face in faces:
        if not isinstance(face, dict):
            raise RemoteParseError("face entry is not an object")
        try:
            x, y, w, h = (int(round(float(face[k]))) for k in cfg.box_fields)
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteParseError(f"face entry missing box fields {cfg.box_fields}") from exc
        weight = 1.0
        if cfg.confidence_field and cfg.confidence_field in face:
            weight = float(face[cfg.confidence_field])
        if w <= 0 or h <= 0:
            continue
        clipped = Rect(x, y, w, h).clip_to(width, height)
        if clipped is not None:
            out.append(Detection(clipped, 0, weight))
    return out


def remote_detect(img: RasterImage, cfg: RemoteDetectorConfig,
                  audit: list | None = None) -> list[Detection]:
    """POST the image to a provider and normalize its face boxes.

    Retries (with exponential backoff) apply only to timeouts and 5xx
    responses; auth failures, other 4xx, and malformed bodies raise
    immediately. Raw response text is appended to `audit` when given.
    """
    headers = {}
    if cfg.api_key_env:
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise RemoteAuthError(f"environment variable {cfg.api_key_env} is not set")
        headers[cfg.auth_header] = key
    body = {cfg.image_field: _encode_png_base64(img, cfg.max_payload_bytes)}

    last_exc: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            time.sleep(cfg.backoff_base * 2 ** (attempt - 1))
        try:
            with _inflight:
                resp = requests.post(cfg.endpoint, json=body, headers=headers,
                                     timeout=cfg.timeout)
        except requests.Timeout as exc:
            last_exc = RemoteTimeoutError(f"no answer within {cfg.timeout}s")
            last_exc.__cause__ = exc
            continue
        except requests.RequestException as exc:
            raise RemoteHTTPError(f"request failed: {exc}") from exc
        if audit is not None:
            audit.append(resp.text)
        if resp.status_code in (401, 403):
            raise RemoteAuthError(f"provider rejected credentials ({resp.status_code})")
        if 500 <= resp.status_code < 600:
            last_exc = RemoteHTTPError(f"server error {resp.status_code}")
            continue
        if not 200 <= resp.status_code < 300:
            raise RemoteHTTPError(f"unexpected status {resp.status_code}")
        try:
            doc = resp.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise RemoteParseError(f"response body is not JSON: {exc}") from exc
        return _parse_response(doc, cfg, img.width, img.height)
    raise last_exc


class LocalCascadeDetector:
    """Adapter over the in-process cascade engine; adds nothing to its output."""

    def __init__(self, model: CascadeModel, params: DetectorParams | None = None):
        self.model = model
        self.params = params or DetectorParams()

    def detect(self, img: RasterImage) -> list[Detection]:
        return detect_multiscale(self.model, img, self.params.scale_factor,
                                 self.params.min_neighbors, self.params.min_size)


class RemoteDetector:
    """Adapter over remote_detect; keeps raw responses for audit."""

    def __init__(self, cfg: RemoteDetectorConfig):
        self.cfg = cfg
        self.audit: list[str] = []

    def detect(self, img: RasterImage) -> list[Detection]:
        return remote_detect(img, self.cfg, audit=self.audit)


@dataclass
class DualViewReport:
    human_detections: list[Detection]
    machine_detections: list[Detection]


def compare_views(png_path, detector: DetectorInterface) -> DualViewReport:
    """Run one detector on both renderings of an RGBA PNG.

    The human view flattens the file over white; the machine view drops the
    alpha channel. Works with the local engine or any remote adapter.
    """
    img = load_image(png_path)
    if img.layout is not Layout.RGBA:
        raise ValueError(f"expected an RGBA PNG, got {img.layout.value}")
    human = flatten_alpha(img, (1.0, 1.0, 1.0))
    machine = drop_alpha(img)
    return DualViewReport(detector.detect(human), detector.detect(machine))
