"""Deterministic image-processing transforms and center-masking.

All transforms operate on uint8 numpy rasters, shape (H, W, 3) or (H, W),
and are pure functions of (input, params, seed). Identity classes
(sharpen alpha=1, resize factor=1, mask ratio=0) are pixel-exact.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from metatrace.labels import (
    INTERP_METHODS,
    JPEG_CHROMA_MODES,
    JPEG_QUALITIES,
    RESIZE_FACTORS,
    SHARPEN_ALPHAS,
    builtin_space,
)
from metatrace.seeding import derive_rng

# Unsharp-mask blur: fixed Gaussian, reflect padding, radius ceil(4*sigma).
SHARPEN_SIGMA = 2.0
SHARPEN_TRUNCATE = 4.0

JITTER_RANGE = 20.0  # percent, symmetric


class PipelineError(ValueError):
    """Raised on invalid transform parameters or degenerate outputs."""


@dataclass(frozen=True)
class ProcessingClass:
    """One concrete processing parameter value within a family."""

    family: str
    name: str
    params: dict

    def output_suffix(self) -> str:
        return "jpg" if self.family == "jpeg" else "png"


@dataclass(frozen=True)
class ResizeJitter:
    """Per-image resize percentage shared across interpolation classes."""

    sample_id: str
    r: float

    def __post_init__(self):
        if abs(self.r) > JITTER_RANGE:
            raise PipelineError(f"|r| must be <= {JITTER_RANGE}, got {self.r}")


@dataclass(frozen=True)
class MaskSpec:
    """Fraction of image area to black out with a centered rectangle."""

    ratio: float

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise PipelineError(f"mask ratio must be in [0,1], got {self.ratio}")


def processing_grid(family: str) -> list[ProcessingClass]:
    """All processing classes of a family, ordered to match its LabelSpace."""
    space = builtin_space(family)
    if family == "jpeg":
        params = [
            {"quality": q, "chroma": c}
            for q in JPEG_QUALITIES
            for c in JPEG_CHROMA_MODES
        ]
    elif family == "sharpening":
        params = [{"alpha": a} for a in SHARPEN_ALPHAS]
    elif family == "resizing":
        params = [{"factor": f} for f in RESIZE_FACTORS]
    elif family == "interpolation":
        params = [{"method": m} for m in INTERP_METHODS]
    else:
        raise PipelineError(f"{family!r} is not a processing family")
    return [
        ProcessingClass(family=family, name=name, params=p)
        for name, p in zip(space.class_names, params)
    ]


def _check_raster(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise PipelineError(f"expected uint8 raster, got {arr.dtype}")
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise PipelineError(f"bad raster shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise PipelineError(f"unsupported channel count {arr.shape[2]}")
    return arr


def _round_half_away(x: float) -> int:
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


# --- JPEG -------------------------------------------------------------

_PIL_SUBSAMPLING = {"4:2:0": 2, "4:4:4": 0}


def apply_jpeg(image: np.ndarray, quality: int, chroma: str) -> bytes:
    """Encode a raster as baseline JPEG with fixed quality and chroma mode."""
    arr = _check_raster(image)
    if quality not in JPEG_QUALITIES:
        raise PipelineError(f"quality must be one of {JPEG_QUALITIES}, got {quality}")
    if chroma not in _PIL_SUBSAMPLING:
        raise PipelineError(f"chroma must be one of {JPEG_CHROMA_MODES}, got {chroma!r}")
    img = Image.fromarray(arr if arr.ndim == 3 else np.stack([arr] * 3, axis=-1))
    if img.mode != "RGB":
        img = img.convert("RGB")
    buf = io.BytesIO()
    # Huffman optimization and progressive mode off: frozen for byte-determinism.
    img.save(
        buf,
        format="JPEG",
        quality=quality,
        subsampling=_PIL_SUBSAMPLING[chroma],
        optimize=False,
        progressive=False,
    )
    return buf.getvalue()


def jpeg_sampling_factors(stream: bytes) -> list[tuple[int, int]]:
    """Parse the SOF marker of a JPEG stream; (h, v) factors per component."""
    if len(stream) < 4 or stream[:2] != b"\xff\xd8":
        raise PipelineError("not a JPEG stream")
    pos = 2
    sof_markers = {0xC0, 0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB}
    while pos + 4 <= len(stream):
        if stream[pos] != 0xFF:
            raise PipelineError(f"marker expected at byte {pos}")
        marker = stream[pos + 1]
        if marker == 0xD9:  # EOI
            break
        seg_len = int.from_bytes(stream[pos + 2 : pos + 4], "big")
        if marker in sof_markers:
            body = stream[pos + 4 : pos + 2 + seg_len]
            n_components = body[5]
            factors = []
            for c in range(n_components):
                sampling = body[6 + 3 * c + 1]
                factors.append((sampling >> 4, sampling & 0x0F))
            return factors
        pos += 2 + seg_len
        if marker == 0xDA:  # entropy-coded data follows; SOF must precede SOS
            break
    raise PipelineError("no SOF marker found")


def verify_chroma_mode(stream: bytes, chroma: str) -> bool:
    """Check the stream's sampling factors against a requested chroma mode."""
    factors = jpeg_sampling_factors(stream)
    if len(factors) != 3:
        return False
    luma, cb, cr = factors
    if chroma == "4:4:4":
        return luma == (1, 1) and cb == (1, 1) and cr == (1, 1)
    if chroma == "4:2:0":
        return luma == (2, 2) and cb == (1, 1) and cr == (1, 1)
    raise PipelineError(f"unknown chroma mode {chroma!r}")


# --- Sharpening -------------------------------------------------------


def apply_sharpen(image: np.ndarray, alpha: float) -> np.ndarray:
    """Unsharp-mask sharpening: alpha*I + (1-alpha)*blur(I), clamped."""
    arr = _check_raster(image)
    if alpha < 1.0:
        raise PipelineError(f"alpha must be >= 1, got {alpha}")
    if alpha == 1.0:
        return arr.copy()
    as_float = arr.astype(np.float64)
    if as_float.ndim == 3:
        blurred = np.stack(
            [
                gaussian_filter(
                    as_float[:, :, c],
                    sigma=SHARPEN_SIGMA,
                    mode="reflect",
                    truncate=SHARPEN_TRUNCATE,
                )
                for c in range(as_float.shape[2])
            ],
            axis=-1,
        )
    else:
        blurred = gaussian_filter(
            as_float, sigma=SHARPEN_SIGMA, mode="reflect", truncate=SHARPEN_TRUNCATE
        )
    sharpened = alpha * as_float + (1.0 - alpha) * blurred
    return np.clip(np.floor(sharpened + 0.5), 0, 255).astype(np.uint8)


# --- Resampling -------------------------------------------------------


def _kernel_box(x: np.ndarray) -> np.ndarray:
    return ((x >= -0.5) & (x < 0.5)).astype(np.float64)


def _kernel_triangle(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(x))


def _kernel_cubic(x: np.ndarray) -> np.ndarray:
    # Keys cubic, a = -0.5
    a = -0.5
    ax = np.abs(x)
    out = np.zeros_like(ax)
    inner = ax < 1.0
    outer = (ax >= 1.0) & (ax < 2.0)
    out[inner] = (a + 2.0) * ax[inner] ** 3 - (a + 3.0) * ax[inner] ** 2 + 1.0
    out[outer] = a * (ax[outer] ** 3 - 5.0 * ax[outer] ** 2 + 8.0 * ax[outer] - 4.0)
    return out


def _kernel_lanczos(x: np.ndarray) -> np.ndarray:
    out = np.sinc(x) * np.sinc(x / 3.0)
    out[np.abs(x) >= 3.0] = 0.0
    return out


_KERNELS = {
    "box": (_kernel_box, 0.5),
    "bilinear": (_kernel_triangle, 1.0),
    "bicubic": (_kernel_cubic, 2.0),
    "lanczos": (_kernel_lanczos, 3.0),
}


def _resample_weights(in_len: int, out_len: int, method: str) -> np.ndarray:
    """Dense (out_len, in_len) row-stochastic resampling weight matrix."""
    kernel, base_support = _KERNELS[method]
    scale = out_len / in_len
    filterscale = max(1.0, 1.0 / scale)
    support = base_support * filterscale
    weights = np.zeros((out_len, in_len), dtype=np.float64)
    positions = np.arange(in_len, dtype=np.float64) + 0.5
    for i in range(out_len):
        center = (i + 0.5) / scale
        lo = max(int(np.floor(center - support)), 0)
        hi = min(int(np.ceil(center + support)) + 1, in_len)
        w = kernel((positions[lo:hi] - center) / filterscale)
        total = w.sum()
        if total == 0.0:
            # degenerate window; fall back to nearest input pixel
            nearest = min(max(int(center), 0), in_len - 1)
            weights[i, nearest] = 1.0
        else:
            weights[i, lo:hi] = w / total
    return weights


def resample(image: np.ndarray, out_h: int, out_w: int, method: str) -> np.ndarray:
    """Separable kernel resampling to (out_h, out_w)."""
    arr = _check_raster(image)
    if method not in _KERNELS:
        raise PipelineError(f"unknown interpolation method {method!r}")
    if out_h < 1 or out_w < 1:
        raise PipelineError(f"degenerate output size {out_h}x{out_w}")
    h, w = arr.shape[:2]
    if (out_h, out_w) == (h, w) and method == "bilinear":
        return arr.copy()
    as_float = arr.astype(np.float64)
    squeeze = as_float.ndim == 2
    if squeeze:
        as_float = as_float[:, :, None]
    if out_w != w:
        ww = _resample_weights(w, out_w, method)
        as_float = np.einsum("ow,hwc->hoc", ww, as_float)
    if out_h != h:
        wh = _resample_weights(h, out_h, method)
        as_float = np.einsum("oh,hwc->owc", wh, as_float)
    out = np.clip(np.floor(as_float + 0.5), 0, 255).astype(np.uint8)
    return out[:, :, 0] if squeeze else out


def apply_resize(image: np.ndarray, factor: float) -> np.ndarray:
    """Scale both sides by a fixed factor with bilinear interpolation."""
    arr = _check_raster(image)
    if factor not in RESIZE_FACTORS:
        raise PipelineError(f"factor must be one of {RESIZE_FACTORS}, got {factor}")
    if factor == 1.0:
        return arr.copy()
    h, w = arr.shape[:2]
    out_h, out_w = _round_half_away(h * factor), _round_half_away(w * factor)
    if out_h < 1 or out_w < 1:
        raise PipelineError(f"degenerate output size {out_h}x{out_w}")
    return resample(arr, out_h, out_w, "bilinear")


def apply_interp_resize(image: np.ndarray, method: str, jitter: ResizeJitter) -> np.ndarray:
    """Resize both sides by (1 + r/100) with the given interpolation kernel."""
    arr = _check_raster(image)
    if method not in INTERP_METHODS:
        raise PipelineError(f"method must be one of {INTERP_METHODS}, got {method!r}")
    factor = 1.0 + jitter.r / 100.0
    h, w = arr.shape[:2]
    out_h, out_w = _round_half_away(h * factor), _round_half_away(w * factor)
    if out_h < 1 or out_w < 1:
        raise PipelineError(f"degenerate output size {out_h}x{out_w}")
    return resample(arr, out_h, out_w, method)


# --- Masking ----------------------------------------------------------


def apply_center_mask(image: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Black out a centered rectangle covering `ratio` of the image area."""
    arr = _check_raster(image).copy()
    if spec.ratio == 0.0:
        return arr
    h, w = arr.shape[:2]
    side = np.sqrt(spec.ratio)
    mh, mw = _round_half_away(h * side), _round_half_away(w * side)
    top, left = (h - mh) // 2, (w - mw) // 2
    arr[top : top + mh, left : left + mw] = 0
    return arr


# --- Jitter sampling --------------------------------------------------


def sample_jitters(ids: list[str], seed: int) -> list[ResizeJitter]:
    """One uniform [-20, 20] percentage per image, deterministic per (seed, id)."""
    jitters = []
    for sid in ids:
        rng = derive_rng(seed, f"jitter:{sid}")
        r = float(rng.uniform(-JITTER_RANGE, JITTER_RANGE))
        jitters.append(ResizeJitter(sample_id=sid, r=r))
    return jitters


# --- Batch processing -------------------------------------------------


def process_manifest(records, family: str, out_dir, seed: int) -> list[dict]:
    """Apply every class of a family to each manifest image; write a ledger.

    Returns ledger entries: (sample_id, class, output path, jitter r when
    the family is interpolation). Non-JPEG families are written as PNG.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = processing_grid(family)
    jitters = {}
    if family == "interpolation":
        jitters = {
            j.sample_id: j
            for j in sample_jitters([r.sample_id for r in records], seed)
        }
    ledger = []
    for rec in records:
        arr = np.asarray(Image.open(rec.source_path).convert("RGB"))
        for cls in grid:
            out_path = out_dir / f"{rec.sample_id}__{family}-{cls.name}.{cls.output_suffix()}"
            entry = {
                "sample_id": rec.sample_id,
                "family": family,
                "class": cls.name,
                "output_path": str(out_path),
            }
            if family == "jpeg":
                stream = apply_jpeg(arr, cls.params["quality"], cls.params["chroma"])
                out_path.write_bytes(stream)
            else:
                if family == "sharpening":
                    out = apply_sharpen(arr, cls.params["alpha"])
                elif family == "resizing":
                    out = apply_resize(arr, cls.params["factor"])
                else:
                    jit = jitters[rec.sample_id]
                    out = apply_interp_resize(arr, cls.params["method"], jit)
                    entry["jitter_r"] = jit.r
                Image.fromarray(out).save(out_path, format="PNG")
            ledger.append(entry)
    with open(out_dir / "ledger.jsonl", "w", encoding="utf-8") as fh:
        for entry in ledger:
            fh.write(json.dumps(entry) + "\n")
    return ledger
