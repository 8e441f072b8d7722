"""Canonical dataset model and the line-delimited manifest file format.

A manifest is a UTF-8 text file with one image record per line.  Each line
is a sequence of ``key=value`` pairs separated by TAB, with keys in the
fixed order ``id, path, make, model, year, color, bbox, split, source``.
Absent optional fields are omitted rather than written as empty values, so
the format round-trips optionals losslessly and stays appendable and
diffable.  Bounding boxes serialize as ``x_min,y_min,x_max,y_max``.

Boxes use half-open pixel intervals: ``x_max``/``y_max`` are exclusive, so
``image[y_min:y_max, x_min:x_max]`` is the boxed region and width equals
``x_max - x_min``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DataError, UsageError

__all__ = [
    "COLOR_NAMES",
    "SPLITS",
    "SOURCES",
    "GRANULARITIES",
    "MANIFEST_KEYS",
    "BoundingBox",
    "ImageRecord",
    "LabelVocabulary",
    "class_label",
    "save_manifest",
    "load_manifest",
    "records_by_id",
]

# The closed 10-color vocabulary used by the color classifier.
COLOR_NAMES = (
    "blue",
    "black",
    "beige",
    "red",
    "white",
    "yellow",
    "orange",
    "purple",
    "green",
    "gray",
)

SPLITS = ("train", "test")
SOURCES = ("stanford", "compcars", "synthetic", "custom")
GRANULARITIES = ("make", "make_model", "make_model_year", "color")

MANIFEST_KEYS = ("id", "path", "make", "model", "year", "color", "bbox", "split", "source")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel rectangle, half-open on the max edges."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            value = getattr(self, name)
            if not isinstance(value, int):
                raise DataError(f"bounding box coordinate {name}={value!r} is not an integer")
            if value < 0:
                raise DataError(f"bounding box coordinate {name}={value} is negative")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise DataError(
                f"degenerate bounding box ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def to_string(self) -> str:
        return f"{self.x_min},{self.y_min},{self.x_max},{self.y_max}"

    @classmethod
    def from_string(cls, text: str) -> "BoundingBox":
        parts = text.split(",")
        if len(parts) != 4:
            raise DataError(f"bounding box {text!r} does not have 4 comma-separated fields")
        try:
            coords = [int(p) for p in parts]
        except ValueError:
            raise DataError(f"bounding box {text!r} has non-integer coordinates") from None
        return cls(*coords)


@dataclass(frozen=True)
class ImageRecord:
    """One labeled image.  Optional fields are ``None`` when absent."""

    id: str
    path: str
    make: str | None = None
    model: str | None = None
    year: int | None = None
    color: str | None = None
    bbox: BoundingBox | None = None
    split: str = "train"
    source: str = "custom"

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("record id must be a non-empty string")
        if self.model is not None and self.make is None:
            raise DataError(f"record {self.id}: model present without make")
        if self.color is not None and self.color not in COLOR_NAMES:
            raise DataError(f"record {self.id}: unknown color {self.color!r}")
        if self.split not in SPLITS:
            raise DataError(f"record {self.id}: unknown split {self.split!r}")
        if self.source not in SOURCES:
            raise DataError(f"record {self.id}: unknown source {self.source!r}")
        if self.year is not None and not isinstance(self.year, int):
            raise DataError(f"record {self.id}: year {self.year!r} is not an integer")

    def with_values(self, **changes) -> "ImageRecord":
        return replace(self, **changes)


def class_label(record: ImageRecord, granularity: str) -> str | None:
    """Class name of ``record`` at ``granularity``, or None if unlabeled.

    Multi-part names join fields with a single space, so e.g. a record with
    make "BMW", model "3 Series Sedan" and year 2012 has the
    make_model_year class "BMW 3 Series Sedan 2012".
    """
    if granularity == "make":
        return record.make
    if granularity == "make_model":
        if record.make is None or record.model is None:
            return None
        return f"{record.make} {record.model}"
    if granularity == "make_model_year":
        if record.make is None or record.model is None or record.year is None:
            return None
        return f"{record.make} {record.model} {record.year}"
    if granularity == "color":
        return record.color
    raise UsageError(f"unknown granularity {granularity!r}")


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered class list; a class's position is the model's output index.

    Order is lexicographic over class names, which makes the output-index
    mapping a pure function of the class set: re-ingesting the same data
    always yields the same vocabulary.
    """

    classes: tuple[str, ...]
    granularity: str
    _index: dict[str, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.granularity not in GRANULARITIES:
            raise UsageError(f"unknown granularity {self.granularity!r}")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("vocabulary class names are not unique")
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(self.classes)})

    @classmethod
    def from_records(cls, records, granularity: str) -> "LabelVocabulary":
        labels = set()
        for record in records:
            label = class_label(record, granularity)
            if label is not None:
                labels.add(label)
        if not labels:
            raise DataError(f"no record carries a label at granularity {granularity!r}")
        return cls(classes=tuple(sorted(labels)), granularity=granularity)

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UsageError(f"label {name!r} is not in the vocabulary") from None

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.granularity.encode("utf-8"))
        for name in self.classes:
            h.update(b"\x00")
            h.update(name.encode("utf-8"))
        return h.hexdigest()


def _format_record(record: ImageRecord) -> str:
    pairs = []
    for key in MANIFEST_KEYS:
        value = getattr(record, key)
        if value is None:
            continue
        if key == "bbox":
            text = value.to_string()
        else:
            text = str(value)
        if "\t" in text or "\n" in text:
            raise DataError(f"record {record.id}: field {key} contains a TAB or newline")
        pairs.append(f"{key}={text}")
    return "\t".join(pairs)


def _parse_record(line: str, lineno: int) -> ImageRecord:
    fields: dict[str, str] = {}
    last_key_index = -1
    for chunk in line.split("\t"):
        key, sep, value = chunk.partition("=")
        if not sep:
            raise DataError(f"manifest line {lineno}: malformed field {chunk!r}")
        if key not in MANIFEST_KEYS:
            raise DataError(f"manifest line {lineno}: unknown key {key!r}")
        key_index = MANIFEST_KEYS.index(key)
        if key_index <= last_key_index:
            raise DataError(f"manifest line {lineno}: key {key!r} out of order or repeated")
        last_key_index = key_index
        fields[key] = value
    if "id" not in fields or "path" not in fields:
        raise DataError(f"manifest line {lineno}: missing required id/path")
    try:
        return ImageRecord(
            id=fields["id"],
            path=fields["path"],
            make=fields.get("make"),
            model=fields.get("model"),
            year=int(fields["year"]) if "year" in fields else None,
            color=fields.get("color"),
            bbox=BoundingBox.from_string(fields["bbox"]) if "bbox" in fields else None,
            split=fields.get("split", "train"),
            source=fields.get("source", "custom"),
        )
    except ValueError:
        raise DataError(f"manifest line {lineno}: year {fields.get('year')!r} is not an integer") from None
    except DataError as exc:
        raise DataError(f"manifest line {lineno}: {exc}") from None


def save_manifest(records, path) -> None:
    records = list(records)
    seen: set[str] = set()
    for record in records:
        if record.id in seen:
            raise DataError(f"duplicate record id {record.id!r}")
        seen.add(record.id)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(_format_record(record))
            fh.write("\n")


def load_manifest(path) -> list[ImageRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest file not found: {path}")
    records: list[ImageRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            record = _parse_record(line, lineno)
            if record.id in seen:
                raise DataError(f"manifest line {lineno}: duplicate record id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    return records


def records_by_id(records) -> dict[str, ImageRecord]:
    return {record.id: record for record in records}
