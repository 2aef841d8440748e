"""Image ingestion, tissue masking, ROI in-painting, resizing and overlays."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import (
    CorruptImage,
    DimensionMismatch,
    NoTissueFound,
    UnsupportedFormat,
    ValueOutOfRange,
)

# ITU-R 601 luma weights, applied to integer RGB.
_LUMA = np.array([0.299, 0.587, 0.114])


def _round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (all pipeline values are non-negative)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


@dataclass(frozen=True)
class ImageBuffer:
    """Decoded H×W×3 8-bit RGB raster."""

    pixels: np.ndarray  # uint8, shape (H, W, 3)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueOutOfRange(f"expected H×W×3 raster, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageBuffer) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class MaskParams:
    morph_kernel: int = 5
    min_component_fraction: float = 0.01

    def __post_init__(self):
        if self.morph_kernel < 1 or self.morph_kernel % 2 == 0:
            raise ValueOutOfRange("morph_kernel must be odd and >= 1")
        if not 0.0 < self.min_component_fraction < 1.0:
            raise ValueOutOfRange("min_component_fraction must be in (0, 1)")


@dataclass(frozen=True)
class TissueMask:
    bits: np.ndarray  # bool, shape (H, W)
    tissue_fraction: float = field(init=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueOutOfRange(f"mask must be 2-D, got shape {bits.shape}")
        count = int(bits.sum())
        if count == 0:
            raise NoTissueFound("mask has no tissue pixels")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "tissue_fraction", count / bits.size)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


def decode_image(data: bytes, hint: str = "auto") -> ImageBuffer:
    """Decode JPEG or PNG bytes into an RGB raster."""
    if hint not in ("jpeg", "png", "auto"):
        raise UnsupportedFormat(f"unknown format hint: {hint!r}")
    if not data:
        raise CorruptImage("empty byte sequence")
    try:
        img = Image.open(io.BytesIO(data))
        fmt = (img.format or "").lower()
        if fmt not in ("jpeg", "png"):
            raise UnsupportedFormat(f"unsupported image format: {fmt or 'unknown'}")
        if hint != "auto" and fmt != hint:
            raise UnsupportedFormat(f"expected {hint}, got {fmt}")
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise CorruptImage(str(exc)) from exc
    except (OSError, SyntaxError) as exc:
        raise CorruptImage(str(exc)) from exc
    return ImageBuffer(arr)


def encode_png(img: ImageBuffer) -> bytes:
    """Encode as 8-bit RGB PNG (no alpha)."""
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def grayscale(img: ImageBuffer) -> np.ndarray:
    """ITU-R 601 luma, rounded to uint8."""
    return _round_half_away(img.pixels.astype(np.float64) @ _LUMA).astype(np.uint8)


def otsu_threshold(gray: np.ndarray) -> int:
    """Threshold T maximizing between-class variance of {g < T} vs {g >= T}.

    Returns the smallest maximizing T in 1..255; tissue pixels are those
    strictly below T.
    """
    hist = np.bincount(gray.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    cum_n = np.cumsum(hist)           # pixels with g <= t
    cum_sum = np.cumsum(hist * np.arange(256))
    best_t, best_var = 1, -1.0
    for t in range(1, 256):
        n0 = cum_n[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            var = 0.0
        else:
            mu0 = cum_sum[t - 1] / n0
            mu1 = (cum_sum[255] - cum_sum[t - 1]) / n1
            var = (n0 / total) * (n1 / total) * (mu0 - mu1) ** 2
        if var > best_var + 1e-12:
            best_var, best_t = var, t
    return best_t


def compute_tissue_mask(img: ImageBuffer, params: MaskParams | None = None) -> TissueMask:
    """Otsu threshold + morphological clean-up + largest 4-connected component."""
    params = params or MaskParams()
    gray = grayscale(img)
    thresh = otsu_threshold(gray)
    raw = gray < thresh
    if not raw.any():
        raise NoTissueFound("no pixels below threshold")

    k = params.morph_kernel
    structure = np.ones((k, k), dtype=bool)
    cleaned = ndimage.binary_closing(raw, structure=structure)
    cleaned = ndimage.binary_opening(cleaned, structure=structure)

    labels, n = ndimage.label(cleaned)  # default structure = 4-connectivity
    if n == 0:
        raise NoTissueFound("no connected component after morphology")
    sizes = ndimage.sum_labels(cleaned, labels, index=np.arange(1, n + 1))
    min_size = params.min_component_fraction * img.width * img.height
    largest = int(np.argmax(sizes)) + 1
    if sizes[largest - 1] < min_size:
        raise NoTissueFound("largest component below minimum size")
    return TissueMask(labels == largest)


def apply_roi_inpainting(img: ImageBuffer, mask: TissueMask) -> ImageBuffer:
    """Replace non-tissue pixels with the per-channel mean tissue color."""
    if (mask.height, mask.width) != (img.height, img.width):
        raise DimensionMismatch(
            f"mask {mask.width}×{mask.height} vs image {img.width}×{img.height}"
        )
    tissue = img.pixels[mask.bits].astype(np.float64)
    fill = _round_half_away(tissue.mean(axis=0)).astype(np.uint8)
    out = img.pixels.copy()
    out[~mask.bits] = fill
    return ImageBuffer(out)


def upsample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers, source coords clamped."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise ValueOutOfRange(f"expected non-empty 2-D grid, got shape {grid.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueOutOfRange("output size must be >= 1")
    in_h, in_w = grid.shape

    def axis_coords(out_n: int, in_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
        s = np.clip(s, 0.0, in_n - 1)
        lo = np.floor(s).astype(int)
        hi = np.minimum(lo + 1, in_n - 1)
        return lo, hi, s - lo

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


# Piecewise-linear colormap control points (value, RGB).
_CMAP_POINTS = [
    (0.00, (0.0, 0.0, 255.0)),
    (0.25, (0.0, 255.0, 255.0)),
    (0.50, (0.0, 255.0, 0.0)),
    (0.75, (255.0, 255.0, 0.0)),
    (1.00, (255.0, 0.0, 0.0)),
]


def colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0,1] to float RGB via the fixed control points."""
    v = np.asarray(values, dtype=np.float64)
    xs = np.array([p for p, _ in _CMAP_POINTS])
    chans = np.array([c for _, c in _CMAP_POINTS])  # (5, 3)
    out = np.empty(v.shape + (3,), dtype=np.float64)
    for ch in range(3):
        out[..., ch] = np.interp(v, xs, chans[:, ch])
    return out


def render_overlay(img: ImageBuffer, map01: np.ndarray, alpha: float) -> ImageBuffer:
    """Alpha-blend the colormapped heatmap over the image."""
    m = np.asarray(map01, dtype=np.float64)
    if m.shape != (img.height, img.width):
        raise DimensionMismatch(f"map shape {m.shape} vs image {img.height}×{img.width}")
    if not np.isfinite(m).all() or m.min() < 0.0 or m.max() > 1.0:
        raise ValueOutOfRange("map values must be finite and in [0, 1]")
    if not 0.0 <= alpha <= 1.0:
        raise ValueOutOfRange("alpha must be in [0, 1]")
    blended = (1.0 - alpha) * img.pixels.astype(np.float64) + alpha * colormap(m)
    return ImageBuffer(_round_half_away(blended).astype(np.uint8))
