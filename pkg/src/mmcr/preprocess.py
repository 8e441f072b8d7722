"""Alignment and normalization: box expansion, square resize, elliptical mask.

All operations are pure functions of their inputs and safe to run in
parallel across records.  Images are numpy uint8 arrays of shape (H, W, 3)
in RGB order; boxes follow the manifest's half-open pixel convention.

The resampling rule is fixed as plain bilinear interpolation with pixel
centers aligned: source coordinate = (dst + 0.5) * (src_size / dst_size)
- 0.5, clamped to the source grid.  No antialiasing, so the output is a
deterministic cross-implementation contract.
"""

from __future__ import annotations

import abc
import functools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, PreprocessError, UsageError
from .manifest import BoundingBox, ImageRecord, save_manifest

__all__ = [
    "PreprocessConfig",
    "Detection",
    "Detector",
    "FullFrameDetector",
    "GroundTruthDetector",
    "load_image",
    "save_image",
    "bilinear_resize",
    "expand_box",
    "crop_and_resize",
    "ellipse_inside",
    "elliptical_mask",
    "preprocess_record",
    "preprocess_manifest",
    "PreprocessResult",
]

logger = logging.getLogger(__name__)

MASK_FILLS = ("black", "mean")


@dataclass(frozen=True)
class PreprocessConfig:
    margin_fraction: float = 0.10
    target_size: int = 224
    mask_fill: str = "black"
    apply_mask: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.margin_fraction < 1:
            raise UsageError(f"margin_fraction must be in [0, 1), got {self.margin_fraction}")
        if self.target_size < 8:
            raise UsageError(f"target_size must be >= 8, got {self.target_size}")
        if self.mask_fill == "crop_mean":  # accepted alias
            object.__setattr__(self, "mask_fill", "mean")
        if self.mask_fill not in MASK_FILLS:
            raise UsageError(f"mask_fill must be one of {MASK_FILLS}, got {self.mask_fill!r}")


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float


class Detector(abc.ABC):
    """Vehicle detector capability: image -> scored boxes within bounds.

    ``path`` is optional context identifying the image's source file;
    providers that look detections up rather than compute them may use it.
    """

    @abc.abstractmethod
    def detect(self, image: np.ndarray, path: str | None = None) -> list[Detection]:
        ...


class FullFrameDetector(Detector):
    """Trivial fallback provider: the whole frame is the vehicle."""

    def detect(self, image: np.ndarray, path: str | None = None) -> list[Detection]:
        h, w = image.shape[:2]
        return [Detection(box=BoundingBox(0, 0, w, h), confidence=1.0)]


class GroundTruthDetector(Detector):
    """Serves dataset-provided boxes, keyed by the image's source path."""

    def __init__(self, records) -> None:
        self._boxes: dict[str, BoundingBox] = {}
        for record in records:
            if record.bbox is not None:
                self._boxes[str(Path(record.path))] = record.bbox

    def detect(self, image: np.ndarray, path: str | None = None) -> list[Detection]:
        if path is None:
            return []
        box = self._boxes.get(str(Path(path)))
        if box is None:
            return []
        h, w = image.shape[:2]
        clamped = BoundingBox(max(0, box.x_min), max(0, box.y_min),
                              min(w, box.x_max), min(h, box.y_max))
        return [Detection(box=clamped, confidence=1.0)]


def load_image(path) -> np.ndarray:
    """Read an image file as an RGB uint8 array, raising DataError on failure."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None


def save_image(image: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(path, format="PNG")


def expand_box(box: BoundingBox, margin_fraction: float, image_width: int,
               image_height: int) -> BoundingBox:
    """Grow each side outward by margin_fraction of the box's own dimension.

    The horizontal margin is margin_fraction * width and the vertical
    margin is margin_fraction * height, each rounded half-up to a whole
    pixel, then the result is clamped to the image.  The output always
    contains the input box.
    """
    if not 0 <= margin_fraction < 1:
        raise UsageError(f"margin_fraction must be in [0, 1), got {margin_fraction}")
    dx = int(math.floor(margin_fraction * box.width + 0.5))
    dy = int(math.floor(margin_fraction * box.height + 0.5))
    x_min = max(0, box.x_min - dx)
    y_min = max(0, box.y_min - dy)
    x_max = min(image_width, box.x_max + dx)
    y_max = min(image_height, box.y_max + dy)
    if x_min >= x_max or y_min >= y_max:
        raise PreprocessError(
            f"box ({box.to_string()}) is degenerate after clamping to "
            f"{image_width}x{image_height}")
    return BoundingBox(x_min, y_min, x_max, y_max)


def bilinear_resize(image: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Resample to (out_height, out_width) with the fixed bilinear rule."""
    in_h, in_w = image.shape[:2]
    src = image.astype(np.float64)

    def axis_coords(out_size: int, in_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coords = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
        coords = np.clip(coords, 0.0, in_size - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, in_size - 1)
        frac = coords - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(out_height, in_h)
    x0, x1, fx = axis_coords(out_width, in_w)

    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bottom = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bottom * fy[:, None, None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def crop_and_resize(image: np.ndarray, box: BoundingBox, target_size: int) -> np.ndarray:
    """Crop the boxed region and rescale it to a square of target_size.

    Aspect ratio is not preserved; the crop is stretched to the square.
    """
    h, w = image.shape[:2]
    if box.x_max > w or box.y_max > h:
        raise PreprocessError(f"box ({box.to_string()}) exceeds image bounds {w}x{h}")
    crop = image[box.y_min:box.y_max, box.x_min:box.x_max]
    if crop.shape[0] == target_size and crop.shape[1] == target_size:
        return crop.copy()
    return bilinear_resize(crop, target_size, target_size)


@functools.lru_cache(maxsize=32)
def ellipse_inside(height: int, width: int) -> np.ndarray:
    """Boolean mask of pixels inside the inscribed axis-aligned ellipse.

    A pixel at row i, column j has center (j + 0.5, i + 0.5); it is inside
    iff ((cx - x)/a)^2 + ((cy - y)/b)^2 <= 1 with center (W/2, H/2) and
    semi-axes a = W/2, b = H/2.  The mask depends only on the dimensions.
    """
    cx, cy = width / 2.0, height / 2.0
    a, b = width / 2.0, height / 2.0
    x = np.arange(width) + 0.5
    y = np.arange(height) + 0.5
    inside = ((cx - x[None, :]) / a) ** 2 + ((cy - y[:, None]) / b) ** 2 <= 1.0
    inside.setflags(write=False)
    return inside


def elliptical_mask(image: np.ndarray, fill: str = "black") -> np.ndarray:
    """Replace pixels outside the inscribed ellipse with the fill value.

    ``mean`` fills with the per-channel mean of the pixels inside the
    ellipse (so masking is idempotent for both fill policies).
    """
    if fill == "crop_mean":  # accepted alias
        fill = "mean"
    if fill not in MASK_FILLS:
        raise UsageError(f"fill must be one of {MASK_FILLS}, got {fill!r}")
    h, w = image.shape[:2]
    inside = ellipse_inside(h, w)
    out = image.copy()
    if fill == "black":
        fill_value = np.zeros(image.shape[2:], dtype=image.dtype)
    else:
        fill_value = np.rint(image[inside].mean(axis=0)).astype(image.dtype)
    out[~inside] = fill_value
    return out


@dataclass
class PreprocessResult:
    record: ImageRecord
    image: np.ndarray
    masked: np.ndarray | None
    box_used: BoundingBox
    aligned: bool = True

    @property
    def final(self) -> np.ndarray:
        return self.masked if self.masked is not None else self.image


def preprocess_record(record: ImageRecord, config: PreprocessConfig,
                      detector: Detector | None = None) -> PreprocessResult:
    """Align one record: pick a box, expand, crop, resize, optionally mask.

    Box precedence: the record's own bbox, then the detector's
    highest-confidence box, then the full frame (tagged unaligned).
    """
    image = load_image(record.path)
    h, w = image.shape[:2]
    aligned = True
    box = record.bbox
    if box is None and detector is not None:
        detections = detector.detect(image, path=record.path)
        if detections:
            box = max(detections, key=lambda d: d.confidence).box
    if box is None:
        box = BoundingBox(0, 0, w, h)
        aligned = False

    expanded = expand_box(box, config.margin_fraction, w, h)
    crop = crop_and_resize(image, expanded, config.target_size)
    masked = elliptical_mask(crop, config.mask_fill) if config.apply_mask else None
    return PreprocessResult(record=record, image=crop, masked=masked,
                            box_used=expanded, aligned=aligned)


def preprocess_manifest(records, config: PreprocessConfig, out_dir,
                        detector: Detector | None = None) -> list[ImageRecord]:
    """Process every record, writing images, a derived manifest, and a log.

    The derived manifest points at the processed images (masked when the
    config applies the mask); processed crops carry no bbox.  The log file
    ``preprocess.log.tsv`` records the box used per record and tags
    full-frame fallbacks as ``unaligned``.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    images_dir = images_dir.resolve()  # manifests carry absolute image paths

    derived: list[ImageRecord] = []
    log_lines: list[str] = []
    for record in records:
        result = preprocess_record(record, config, detector)
        out_path = images_dir / f"{record.id}.png"
        save_image(result.final, out_path)
        derived.append(record.with_values(path=str(out_path), bbox=None))
        status = "aligned" if result.aligned else "unaligned"
        log_lines.append(f"{record.id}\t{status}\t{result.box_used.to_string()}")
        if not result.aligned:
            logger.warning("record %s: no box available, used full frame", record.id)

    save_manifest(derived, out_dir / "manifest.tsv")
    (out_dir / "preprocess.log.tsv").write_text("\n".join(log_lines) + ("\n" if log_lines else ""),
                                                encoding="utf-8")
    return derived
