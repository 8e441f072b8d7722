"""Synthetic dataset generator for desk-scale training and testing.

Renders one vehicle-stand-in shape per image on a neutral gray background.
In color mode each class is one of the 10 canonical colors and the shape
varies freely over the solid families, so fill color is the only class
signal.  In make-model mode each class is a distinct shape family and the
fill color varies freely, so geometry is the only class signal.  Every
record carries an exact bounding box computed from the rendered silhouette.

Generation is fully deterministic for a fixed seed: the same call produces
byte-identical images and manifests.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import UsageError
from .manifest import COLOR_NAMES, BoundingBox, ImageRecord, save_manifest

__all__ = ["SHAPE_FAMILIES", "COLOR_RGB", "generate_synthetic"]

# Nominal RGB for each canonical color name; per-image jitter is applied.
COLOR_RGB = {
    "blue": (30, 60, 220),
    "black": (18, 18, 18),
    "beige": (225, 198, 153),
    "red": (215, 30, 35),
    "white": (245, 245, 245),
    "yellow": (250, 220, 25),
    "orange": (255, 140, 0),
    "purple": (130, 35, 185),
    "green": (25, 160, 45),
    "gray": (128, 128, 128),
}

SHAPE_FAMILIES = (
    "disk",
    "square",
    "triangle",
    "diamond",
    "plus",
    "cross",
    "star",
    "ring",
    "hbars",
    "vbars",
    "square_outline",
    "triangle_outline",
    "diamond_outline",
    "hexagon",
    "crescent",
    "checker",
    "two_disks",
    "arrow",
    "tshape",
    "lshape",
)

# Color mode draws only from these: solid fills with a high bbox fill
# fraction keep the body color dominant inside the detector crop, so color
# is recoverable from mean pixel value.
_SOLID_FAMILIES = ("disk", "square", "hexagon")

_CANVAS = 128


def _regular_polygon(cx: float, cy: float, r: float, sides: int, phase: float = -math.pi / 2):
    return [
        (cx + r * math.cos(phase + 2 * math.pi * i / sides),
         cy + r * math.sin(phase + 2 * math.pi * i / sides))
        for i in range(sides)
    ]


def _star_points(cx: float, cy: float, r: float):
    points = []
    for i in range(10):
        radius = r if i % 2 == 0 else 0.45 * r
        angle = -math.pi / 2 + math.pi * i / 5
        points.append((cx + radius * math.cos(angle), cy + radius * math.sin(angle)))
    return points


def _shrink(points, cx: float, cy: float, factor: float):
    return [(cx + (x - cx) * factor, cy + (y - cy) * factor) for x, y in points]


def _draw_family(draw: ImageDraw.ImageDraw, family: str, cx: float, cy: float, e: float,
                 fill, bg) -> None:
    """Draw one shape family centered at (cx, cy) with half-extent e.

    ``bg`` is used to punch holes (ring interiors, outlines), so the same
    routine renders both the visible image and the silhouette mask.
    """
    if family == "disk":
        draw.ellipse([cx - e, cy - e, cx + e, cy + e], fill=fill)
    elif family == "square":
        draw.rectangle([cx - e, cy - e, cx + e, cy + e], fill=fill)
    elif family == "triangle":
        draw.polygon([(cx, cy - e), (cx - e, cy + e), (cx + e, cy + e)], fill=fill)
    elif family == "diamond":
        draw.polygon([(cx, cy - e), (cx + e, cy), (cx, cy + e), (cx - e, cy)], fill=fill)
    elif family == "plus":
        w = 0.38 * e
        draw.rectangle([cx - w, cy - e, cx + w, cy + e], fill=fill)
        draw.rectangle([cx - e, cy - w, cx + e, cy + w], fill=fill)
    elif family == "cross":
        w = max(2, int(0.55 * e))
        draw.line([cx - e, cy - e, cx + e, cy + e], fill=fill, width=w)
        draw.line([cx - e, cy + e, cx + e, cy - e], fill=fill, width=w)
    elif family == "star":
        draw.polygon(_star_points(cx, cy, e), fill=fill)
    elif family == "ring":
        draw.ellipse([cx - e, cy - e, cx + e, cy + e], fill=fill)
        hole = 0.55 * e
        draw.ellipse([cx - hole, cy - hole, cx + hole, cy + hole], fill=bg)
    elif family == "hbars":
        bar = 0.3 * e
        for offset in (-e + bar, 0.0, e - bar):
            draw.rectangle([cx - e, cy + offset - bar / 2, cx + e, cy + offset + bar / 2],
                           fill=fill)
    elif family == "vbars":
        bar = 0.3 * e
        for offset in (-e + bar, 0.0, e - bar):
            draw.rectangle([cx + offset - bar / 2, cy - e, cx + offset + bar / 2, cy + e],
                           fill=fill)
    elif family == "square_outline":
        draw.rectangle([cx - e, cy - e, cx + e, cy + e], fill=fill)
        inner = 0.55 * e
        draw.rectangle([cx - inner, cy - inner, cx + inner, cy + inner], fill=bg)
    elif family == "triangle_outline":
        outer = [(cx, cy - e), (cx - e, cy + e), (cx + e, cy + e)]
        draw.polygon(outer, fill=fill)
        draw.polygon(_shrink(outer, cx, cy + 0.33 * e, 0.5), fill=bg)
    elif family == "diamond_outline":
        outer = [(cx, cy - e), (cx + e, cy), (cx, cy + e), (cx - e, cy)]
        draw.polygon(outer, fill=fill)
        draw.polygon(_shrink(outer, cx, cy, 0.5), fill=bg)
    elif family == "hexagon":
        draw.polygon(_regular_polygon(cx, cy, e, 6), fill=fill)
    elif family == "crescent":
        draw.ellipse([cx - e, cy - e, cx + e, cy + e], fill=fill)
        draw.ellipse([cx - 0.3 * e, cy - 0.9 * e, cx + 1.3 * e, cy + 0.9 * e], fill=bg)
    elif family == "checker":
        cell = 2 * e / 3
        for row in range(3):
            for col in range(3):
                if (row + col) % 2 == 0:
                    x0 = cx - e + col * cell
                    y0 = cy - e + row * cell
                    draw.rectangle([x0, y0, x0 + cell, y0 + cell], fill=fill)
    elif family == "two_disks":
        r = 0.48 * e
        draw.ellipse([cx - e, cy - r, cx - e + 2 * r, cy + r], fill=fill)
        draw.ellipse([cx + e - 2 * r, cy - r, cx + e, cy + r], fill=fill)
    elif family == "arrow":
        w = 0.35 * e
        draw.rectangle([cx - e, cy - w, cx + 0.2 * e, cy + w], fill=fill)
        draw.polygon([(cx + 0.2 * e, cy - e), (cx + e, cy), (cx + 0.2 * e, cy + e)], fill=fill)
    elif family == "tshape":
        w = 0.35 * e
        draw.rectangle([cx - e, cy - e, cx + e, cy - e + 2 * w], fill=fill)
        draw.rectangle([cx - w, cy - e, cx + w, cy + e], fill=fill)
    elif family == "lshape":
        w = 0.35 * e
        draw.rectangle([cx - e, cy - e, cx - e + 2 * w, cy + e], fill=fill)
        draw.rectangle([cx - e, cy + e - 2 * w, cx + e, cy + e], fill=fill)
    else:  # pragma: no cover - families are validated upstream
        raise UsageError(f"unknown shape family {family!r}")


def _render(family: str, rgb: tuple[int, int, int], bg_level: int, cx: float, cy: float,
            e: float) -> tuple[Image.Image, BoundingBox]:
    image = Image.new("RGB", (_CANVAS, _CANVAS), (bg_level, bg_level, bg_level))
    _draw_family(ImageDraw.Draw(image), family, cx, cy, e,
                 fill=rgb, bg=(bg_level, bg_level, bg_level))

    mask = Image.new("L", (_CANVAS, _CANVAS), 0)
    _draw_family(ImageDraw.Draw(mask), family, cx, cy, e, fill=255, bg=0)
    ys, xs = np.nonzero(np.asarray(mask))
    bbox = BoundingBox(x_min=int(xs.min()), y_min=int(ys.min()),
                       x_max=int(xs.max()) + 1, y_max=int(ys.max()) + 1)
    return image, bbox


def generate_synthetic(out_dir, n_classes: int, n_per_class: int, color_mode: bool = False,
                       seed: int = 0) -> list[ImageRecord]:
    """Render a labeled dataset under ``out_dir`` and return its records.

    Writes PNGs to ``out_dir/images/`` and the manifest to
    ``out_dir/manifest.tsv``.  The split is per class: the first
    floor(0.8 * n_per_class) images go to train, the rest to test.
    """
    if n_classes < 2:
        raise UsageError(f"n_classes must be >= 2, got {n_classes}")
    if n_per_class < 2:
        raise UsageError(f"n_per_class must be >= 2, got {n_per_class}")
    if color_mode and n_classes > len(COLOR_NAMES):
        raise UsageError(f"color mode supports at most {len(COLOR_NAMES)} classes, "
                         f"got {n_classes}")
    if not color_mode and n_classes > len(SHAPE_FAMILIES):
        raise UsageError(f"make-model mode supports at most {len(SHAPE_FAMILIES)} shape "
                         f"families, got {n_classes}")

    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    images_dir = images_dir.resolve()  # manifests carry absolute image paths
    rng = np.random.default_rng(seed)
    n_train = int(math.floor(0.8 * n_per_class))

    records: list[ImageRecord] = []
    for ci in range(n_classes):
        for k in range(n_per_class):
            if color_mode:
                color_name = COLOR_NAMES[ci]
                base = COLOR_RGB[color_name]
                family = _SOLID_FAMILIES[int(rng.integers(0, len(_SOLID_FAMILIES)))]
                bg_level = int(rng.integers(110, 151))
            else:
                color_name = None
                family = SHAPE_FAMILIES[ci]
                base = COLOR_RGB[COLOR_NAMES[int(rng.integers(0, len(COLOR_NAMES)))]]
                bg_level = int(rng.integers(70, 191))
            jitter = rng.integers(-12, 13, size=3)
            rgb = tuple(int(np.clip(base[i] + jitter[i], 0, 255)) for i in range(3))
            cx = _CANVAS / 2 + float(rng.uniform(-0.1, 0.1)) * _CANVAS
            cy = _CANVAS / 2 + float(rng.uniform(-0.1, 0.1)) * _CANVAS
            e = float(rng.uniform(0.22, 0.34)) * _CANVAS

            image, bbox = _render(family, rgb, bg_level, cx, cy, e)
            record_id = f"synthetic_{ci:03d}_{k:04d}"
            path = images_dir / f"{record_id}.png"
            image.save(path, format="PNG")
            records.append(ImageRecord(
                id=record_id,
                path=str(path),
                make=None if color_mode else "synthetic",
                model=None if color_mode else f"class_{ci}",
                color=color_name,
                bbox=bbox,
                split="train" if k < n_train else "test",
                source="synthetic",
            ))

    save_manifest(records, out_dir / "manifest.tsv")
    return records
