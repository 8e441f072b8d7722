"""Ingestion adapters for the two public benchmark release formats.

Stanford Cars ships MATLAB annotation files.  Two layouts are accepted:

* the devkit triple ``cars_meta.mat`` + ``cars_train_annos.mat`` +
  ``cars_test_annos_withlabels.mat`` (falling back to ``cars_test_annos.mat``
  when the labeled test file is absent), with images under
  ``<images_root>/cars_train`` and ``<images_root>/cars_test``;
* the combined ``cars_annos.mat`` whose entries carry a ``test`` flag and a
  ``relative_im_path`` resolved against ``images_root``.

CompCars is a directory tree.  Classification reads
``train_test_split/classification/{train,test}.txt`` whose lines are
relative image paths ``make_id/model_id/year/file.jpg``; bounding boxes come
from the matching ``label/**.txt`` files (third line ``x1 y1 x2 y2``) when
present.  Verification reads the three 20,000-line pair files
``train_test_split/verification/verification_pairs_{easy,medium,hard}.txt``
(``path_a path_b label`` with label 1 = same class) plus, when present,
``verification_train.txt`` in the same pair format for threshold
calibration.

Source boxes are 1-indexed inclusive corners; they convert to this
package's 0-indexed half-open convention as (x1-1, y1-1, x2, y2).
"""

from __future__ import annotations

import logging
from pathlib import Path

from .errors import IngestError, UsageError
from .manifest import BoundingBox, ImageRecord

__all__ = ["load_stanford", "load_compcars", "parse_class_name"]

logger = logging.getLogger(__name__)

COMPCARS_PAIR_DIFFICULTIES = ("easy", "medium", "hard")


def parse_class_name(name: str) -> tuple[str, str | None, int | None]:
    """Split a benchmark class name into (make, model, year).

    The last whitespace token becomes the year when it parses as a
    plausible one; the first token is the make and the remainder the model.
    "AM General Hummer SUV 2000" -> ("AM", "General Hummer SUV", 2000).
    """
    tokens = name.split()
    year = None
    if len(tokens) >= 2 and tokens[-1].isdigit() and len(tokens[-1]) == 4:
        year = int(tokens[-1])
        tokens = tokens[:-1]
    make = tokens[0]
    model = " ".join(tokens[1:]) if len(tokens) > 1 else None
    return make, model, year


def _load_mat(path: Path):
    try:
        from scipy.io import loadmat
    except ImportError as exc:  # pragma: no cover
        raise IngestError("scipy is required to read Stanford .mat annotations") from exc
    try:
        return loadmat(str(path), squeeze_me=True, struct_as_record=False)
    except Exception as exc:
        raise IngestError(f"cannot read annotation file {path}: {exc}") from exc


def _mat_entries(mat: dict, key: str, path: Path):
    if key not in mat:
        raise IngestError(f"annotation file {path} has no {key!r} array")
    entries = mat[key]
    if isinstance(entries, str):
        return [entries]  # a single name squeezes to a bare string
    try:
        return list(entries)
    except TypeError:
        return [entries]  # single-entry files squeeze to a scalar struct


def _stanford_record(entry, class_names, images_dir: str, split: str, source_path: Path,
                     index: int) -> ImageRecord:
    try:
        fname = str(entry.fname)
        x1 = int(entry.bbox_x1)
        y1 = int(entry.bbox_y1)
        x2 = int(entry.bbox_x2)
        y2 = int(entry.bbox_y2)
        class_index = int(getattr(entry, "class")) - 1
    except (AttributeError, TypeError, ValueError) as exc:
        raise IngestError(f"{source_path}: entry {index} is malformed: {exc}") from None
    if not 0 <= class_index < len(class_names):
        raise IngestError(f"{source_path}: entry {index} ({fname}) has class {class_index + 1} "
                          f"outside 1..{len(class_names)}")
    make, model, year = parse_class_name(str(class_names[class_index]))
    return ImageRecord(
        id=f"stanford_{split}_{Path(fname).stem}",
        path=str(Path(images_dir) / fname),
        make=make,
        model=model,
        year=year,
        bbox=BoundingBox(x_min=x1 - 1, y_min=y1 - 1, x_max=x2, y_max=y2),
        split=split,
        source="stanford",
    )


def _warn_missing_paths(records: list[ImageRecord]) -> None:
    missing = [r for r in records if not Path(r.path).exists()]
    for record in missing[:20]:
        logger.warning("record %s: image path does not resolve: %s", record.id, record.path)
    if len(missing) > 20:
        logger.warning("... and %d more records with unresolved image paths", len(missing) - 20)


def load_stanford(annotation_path, images_root) -> list[ImageRecord]:
    """Load the Stanford Cars dataset as make_model_year-labeled records.

    ``annotation_path`` may be the devkit directory, a single devkit .mat
    file's directory, or a combined ``cars_annos.mat`` file.  Records whose
    image files are missing are kept and logged, never dropped.
    """
    annotation_path = Path(annotation_path)
    images_root = Path(images_root).resolve()
    if not annotation_path.exists():
        raise IngestError(f"annotation path not found: {annotation_path}")

    if annotation_path.is_file():
        mat = _load_mat(annotation_path)
        if "annotations" in mat and "class_names" in mat:
            return _load_stanford_combined(mat, annotation_path, images_root)
        raise IngestError(f"{annotation_path} is not a combined Stanford annotation file; "
                          "pass the devkit directory instead")

    combined = annotation_path / "cars_annos.mat"
    if combined.exists():
        return _load_stanford_combined(_load_mat(combined), combined, images_root)

    meta_path = annotation_path / "cars_meta.mat"
    if not meta_path.exists():
        raise IngestError(f"missing cars_meta.mat under {annotation_path}")
    class_names = _mat_entries(_load_mat(meta_path), "class_names", meta_path)

    records: list[ImageRecord] = []
    train_path = annotation_path / "cars_train_annos.mat"
    if not train_path.exists():
        raise IngestError(f"missing cars_train_annos.mat under {annotation_path}")
    for i, entry in enumerate(_mat_entries(_load_mat(train_path), "annotations", train_path)):
        records.append(_stanford_record(entry, class_names, str(images_root / "cars_train"),
                                        "train", train_path, i))

    test_path = annotation_path / "cars_test_annos_withlabels.mat"
    if not test_path.exists():
        test_path = annotation_path / "cars_test_annos.mat"
    if not test_path.exists():
        raise IngestError(f"missing cars_test_annos_withlabels.mat under {annotation_path}")
    for i, entry in enumerate(_mat_entries(_load_mat(test_path), "annotations", test_path)):
        records.append(_stanford_record(entry, class_names, str(images_root / "cars_test"),
                                        "test", test_path, i))

    _warn_missing_paths(records)
    return records


def _load_stanford_combined(mat, source_path: Path, images_root: Path) -> list[ImageRecord]:
    class_names = _mat_entries(mat, "class_names", source_path)
    records: list[ImageRecord] = []
    for i, entry in enumerate(_mat_entries(mat, "annotations", source_path)):
        try:
            rel = str(entry.relative_im_path)
            is_test = bool(int(entry.test))
            x1 = int(entry.bbox_x1)
            y1 = int(entry.bbox_y1)
            x2 = int(entry.bbox_x2)
            y2 = int(entry.bbox_y2)
            class_index = int(getattr(entry, "class")) - 1
        except (AttributeError, TypeError, ValueError) as exc:
            raise IngestError(f"{source_path}: entry {i} is malformed: {exc}") from None
        if not 0 <= class_index < len(class_names):
            raise IngestError(f"{source_path}: entry {i} ({rel}) has class {class_index + 1} "
                              f"outside 1..{len(class_names)}")
        make, model, year = parse_class_name(str(class_names[class_index]))
        split = "test" if is_test else "train"
        records.append(ImageRecord(
            id=f"stanford_{split}_{Path(rel).stem}",
            path=str(images_root / rel),
            make=make,
            model=model,
            year=year,
            bbox=BoundingBox(x_min=x1 - 1, y_min=y1 - 1, x_max=x2, y_max=y2),
            split=split,
            source="stanford",
        ))
    _warn_missing_paths(records)
    return records


def _compcars_bbox(annotation_root: Path, rel: str) -> BoundingBox | None:
    label_path = annotation_root / "label" / Path(rel).with_suffix(".txt")
    if not label_path.exists():
        return None
    try:
        lines = label_path.read_text(encoding="utf-8").splitlines()
        x1, y1, x2, y2 = (int(float(v)) for v in lines[2].split())
    except (IndexError, ValueError) as exc:
        raise IngestError(f"malformed CompCars label file {label_path}: {exc}") from None
    if x1 >= x2 or y1 >= y2:
        return None  # a handful of release boxes are degenerate; fall back to detector
    return BoundingBox(x_min=max(0, x1 - 1), y_min=max(0, y1 - 1), x_max=x2, y_max=y2)


def _compcars_record(annotation_root: Path, images_root: Path, rel: str, split: str,
                     source_path: Path, lineno: int) -> ImageRecord:
    parts = Path(rel).parts
    if len(parts) != 4:
        raise IngestError(f"{source_path} line {lineno}: path {rel!r} is not "
                          "make_id/model_id/year/file")
    make_id, model_id, year_str, fname = parts
    year = int(year_str) if year_str.isdigit() and year_str != "unknown" else None
    return ImageRecord(
        id="compcars_" + rel.replace("/", "_").rsplit(".", 1)[0],
        path=str(images_root / rel),
        make=make_id,
        model=model_id,
        year=year,
        bbox=_compcars_bbox(annotation_root, rel),
        split=split,
        source="compcars",
    )


def _read_rel_paths(path: Path) -> list[str]:
    if not path.exists():
        raise IngestError(f"missing CompCars split file {path}")
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_compcars(annotation_root, images_root=None, task: str = "classification"):
    """Load CompCars for classification or verification.

    Classification returns a list of ImageRecord with the release's 70/30
    train/test split.  Verification returns
    ``(records, {difficulty: [(id_a, id_b, label), ...]}, calibration_pairs)``
    where labels are "same"/"different", the records cover every image
    referenced by any pair, and ``calibration_pairs`` come from the
    release's verification training pairs (empty when the file is absent).
    """
    annotation_root = Path(annotation_root)
    if not annotation_root.exists():
        raise IngestError(f"annotation root not found: {annotation_root}")
    images_root = (Path(images_root) if images_root is not None else annotation_root / "image").resolve()

    if task == "classification":
        records = []
        split_dir = annotation_root / "train_test_split" / "classification"
        for split, fname in (("train", "train.txt"), ("test", "test.txt")):
            for lineno, rel in enumerate(_read_rel_paths(split_dir / fname), start=1):
                records.append(_compcars_record(annotation_root, images_root, rel, split,
                                                split_dir / fname, lineno))
        _warn_missing_paths(records)
        return records

    if task == "verification":
        pair_dir = annotation_root / "train_test_split" / "verification"
        referenced: dict[str, ImageRecord] = {}

        def record_for(rel: str, source_path: Path, lineno: int) -> str:
            record = _compcars_record(annotation_root, images_root, rel, "test",
                                      source_path, lineno)
            referenced.setdefault(record.id, record)
            return record.id

        def read_pairs(path: Path, required: bool):
            if not path.exists():
                if required:
                    raise IngestError(f"missing CompCars verification pair list {path}")
                return []
            pairs = []
            for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 3 or parts[2] not in ("0", "1"):
                    raise IngestError(f"{path} line {lineno}: expected 'path_a path_b 0|1'")
                id_a = record_for(parts[0], path, lineno)
                id_b = record_for(parts[1], path, lineno)
                pairs.append((id_a, id_b, "same" if parts[2] == "1" else "different"))
            return pairs

        pair_sets = {
            difficulty: read_pairs(pair_dir / f"verification_pairs_{difficulty}.txt", required=True)
            for difficulty in COMPCARS_PAIR_DIFFICULTIES
        }
        calibration = read_pairs(pair_dir / "verification_train.txt", required=False)
        records = list(referenced.values())
        _warn_missing_paths(records)
        return records, pair_sets, calibration

    raise UsageError(f"unknown CompCars task {task!r}; expected classification or verification")
