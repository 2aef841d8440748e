"""Explanation maps from captured activations/gradients, plus scoring."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .backend import CaptureBundle
from .errors import (
    DimensionMismatch,
    NonFiniteInput,
    NonFiniteWeights,
    WrongMode,
)
from .imaging import TissueMask, upsample_bilinear

METHODS = ("gradcam", "gradcampp", "hirescam", "guided_gradcam")

HLMAP_MAGIC = b"HLMAP1"


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray  # (h, w)
    normalized: bool
    source_method: Literal["gradcam", "gradcampp", "hirescam"]


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray  # (H, W)
    normalized: bool
    source_method: Literal["guided_bp", "guided_gradcam"]


def _require_mode(bundle: CaptureBundle, mode: str) -> None:
    if bundle.mode != mode:
        raise WrongMode(f"needs {mode}-mode capture, got {bundle.mode}")


def grad_cam(bundle: CaptureBundle) -> Heatmap:
    """Channel weights = spatially averaged gradients; rectified weighted sum."""
    _require_mode(bundle, "standard")
    alpha = bundle.layer_gradients.mean(axis=(1, 2))
    # channel reduction ordered identically to hires_cam so the two agree
    # exactly when every channel's gradient is spatially constant
    raw = np.maximum((alpha[:, None, None] * bundle.activations).sum(axis=0), 0.0)
    return Heatmap(raw, normalized=False, source_method="gradcam")


def grad_cam_pp(bundle: CaptureBundle) -> Heatmap:
    """First/second/third gradient-power weighting with the 0/0 -> 0 rule."""
    _require_mode(bundle, "standard")
    g = bundle.layer_gradients
    a = bundle.activations
    denom = 2.0 * g**2 + a.sum(axis=(1, 2))[:, None, None] * g**3
    num = g**2
    alpha = np.divide(num, denom, out=np.zeros_like(num), where=denom != 0.0)
    if not np.isfinite(alpha).all():
        raise NonFiniteWeights("Grad-CAM++ weights are non-finite")
    w = (alpha * np.maximum(g, 0.0)).sum(axis=(1, 2))
    raw = np.maximum((w[:, None, None] * a).sum(axis=0), 0.0)
    return Heatmap(raw, normalized=False, source_method="gradcampp")


def hires_cam(bundle: CaptureBundle) -> Heatmap:
    """Elementwise gradient-activation product before the channel sum."""
    _require_mode(bundle, "standard")
    raw = np.maximum((bundle.layer_gradients * bundle.activations).sum(axis=0), 0.0)
    return Heatmap(raw, normalized=False, source_method="hirescam")


def guided_backprop_saliency(bundle: CaptureBundle) -> SaliencyMap:
    """Per-pixel maximum absolute gradient over the color channels."""
    _require_mode(bundle, "guided")
    raw = np.abs(bundle.input_gradients).max(axis=2)
    return SaliencyMap(raw, normalized=False, source_method="guided_bp")


def guided_grad_cam(cam: Heatmap, saliency: SaliencyMap, image_size: tuple[int, int]) -> SaliencyMap:
    """Upsampled CAM fused multiplicatively with the guided saliency."""
    h, w = image_size
    if saliency.values.shape != (h, w):
        raise DimensionMismatch(
            f"saliency shape {saliency.values.shape} vs image size {image_size}"
        )
    lifted = upsample_bilinear(cam.values, h, w)
    return SaliencyMap(lifted * saliency.values, normalized=False, source_method="guided_gradcam")


def normalize_map(raw: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0,1]; constant maps become all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise NonFiniteInput("map holds non-finite values")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def focus_consistency(map01: np.ndarray, mask: TissueMask) -> float:
    """Fraction of heatmap mass inside the tissue mask."""
    m = np.asarray(map01, dtype=np.float64)
    if m.shape != mask.bits.shape:
        raise DimensionMismatch(f"map shape {m.shape} vs mask shape {mask.bits.shape}")
    total = m.sum()
    if total == 0.0:
        return 0.0
    return float(m[mask.bits].sum() / total)


def write_hlmap(map01: np.ndarray) -> bytes:
    """Portable float grid: 16-byte header then little-endian float32 rows."""
    m = np.asarray(map01, dtype=np.float64)
    h, w = m.shape
    if h > 0xFFFF or w > 0xFFFF:
        raise DimensionMismatch("map too large for hlmap header")
    header = HLMAP_MAGIC + struct.pack("<HH", h, w)
    header += b"\x00" * (16 - len(header))
    return header + m.astype("<f4").tobytes()


def read_hlmap(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:6] != HLMAP_MAGIC:
        raise NonFiniteInput("not a heatmap grid file")
    h, w = struct.unpack("<HH", data[6:10])
    grid = np.frombuffer(data[16:], dtype="<f4")
    if grid.size != h * w:
        raise NonFiniteInput("heatmap grid payload truncated")
    return grid.reshape(h, w).astype(np.float64)
