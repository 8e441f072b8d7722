"""Semi-automated dataset pruning: outlier scoring and the review loop.

Records are scored by how far their embedding sits from their class
centroid, z-scored against the class's own distance distribution.  The
most anomalous fraction becomes a persisted queue of pending review items;
human verdicts are appended to that queue file and later folded back into
a new manifest by ``apply_verdicts``.

The queue file reuses the manifest's line format (``key=value`` pairs
separated by TAB).  It is append-only: a verdict is a new line for the
same item id, and the latest timestamp wins, which keeps concurrent
annotators auditable.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .manifest import ImageRecord, LabelVocabulary, class_label
from .models.data import load_image_batch
from .models.network import ClassifierModel, extract_features

__all__ = [
    "ReviewItem",
    "ClassStats",
    "REVIEW_STATUSES",
    "class_statistics",
    "outlier_score",
    "build_review_queue",
    "apply_verdicts",
    "save_queue",
    "load_queue",
    "append_verdict",
    "utc_timestamp",
]

REVIEW_STATUSES = ("pending", "accepted", "rejected", "relabeled")


def utc_timestamp() -> str:
    """Fixed-width UTC timestamp whose lexicographic order is chronological.

    Every queue writer must use this one format; the fold in
    ``load_queue`` compares timestamps as strings.
    """
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")

QUEUE_KEYS = ("id", "record_id", "path", "proposed_label", "granularity",
              "outlier_score", "status", "verdict_label", "annotator", "timestamp")


@dataclass(frozen=True)
class ReviewItem:
    id: str
    record_id: str
    path: str
    proposed_label: str
    granularity: str
    outlier_score: float
    status: str = "pending"
    verdict_label: str | None = None
    annotator: str | None = None
    timestamp: str | None = None

    def __post_init__(self) -> None:
        if self.status not in REVIEW_STATUSES:
            raise DataError(f"review item {self.id}: unknown status {self.status!r}")
        if self.status != "pending" and (self.timestamp is None or self.annotator is None):
            raise DataError(f"review item {self.id}: resolved items need annotator "
                            f"and timestamp")
        if self.status == "relabeled" and not self.verdict_label:
            raise DataError(f"review item {self.id}: relabeled without verdict_label")

    def resolved(self) -> bool:
        return self.status != "pending"


@dataclass(frozen=True)
class ClassStats:
    centroid: np.ndarray
    mean_distance: float
    std_distance: float
    count: int


def class_statistics(embeddings_by_label: dict[str, np.ndarray],
                     ) -> tuple[dict[str, ClassStats], list[str]]:
    """Per-class centroid and distance statistics (population stddev).

    Classes with fewer than two members cannot be scored; they are
    excluded and returned separately for reporting.
    """
    stats: dict[str, ClassStats] = {}
    excluded: list[str] = []
    for label, embeddings in embeddings_by_label.items():
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.ndim != 2:
            raise UsageError(f"class {label!r}: embeddings must be a 2-d array")
        if len(embeddings) < 2:
            excluded.append(label)
            continue
        centroid = embeddings.mean(axis=0)
        distances = np.linalg.norm(embeddings - centroid, axis=1)
        stats[label] = ClassStats(
            centroid=centroid,
            mean_distance=float(distances.mean()),
            std_distance=float(distances.std()),  # population formula
            count=len(embeddings),
        )
    return stats, sorted(excluded)


def outlier_score(embedding: np.ndarray, stats: ClassStats) -> float:
    """Z-score of the embedding's distance to its class centroid.

    A zero-spread class scores 0 for members sitting exactly at the mean
    distance and +inf otherwise (flag-always).
    """
    distance = float(np.linalg.norm(np.asarray(embedding, dtype=np.float64) - stats.centroid))
    if stats.std_distance == 0.0:
        return 0.0 if distance == stats.mean_distance else math.inf
    return (distance - stats.mean_distance) / stats.std_distance


def build_review_queue(records, model: ClassifierModel, flag_fraction: float,
                       out_path=None) -> tuple[list[ReviewItem], list[str]]:
    """Flag the most anomalous fraction of records as pending review items.

    Returns (items, excluded_classes).  The flagged count is
    ceil(flag_fraction * n_scorable); ordering is by descending score with
    ties broken by record id, so rebuilding from identical inputs yields an
    identical queue.  When ``out_path`` is given the queue is persisted.
    """
    records = list(records)
    if not records:
        raise UsageError("cannot build a review queue from an empty manifest")
    if not 0 < flag_fraction <= 1:
        raise UsageError(f"flag_fraction must be in (0, 1], got {flag_fraction}")

    granularity = model.vocabulary.granularity
    labels: list[str] = []
    for record in records:
        label = class_label(record, granularity)
        if label is None:
            raise DataError(f"record {record.id} carries no label at granularity "
                            f"{granularity!r}")
        labels.append(label)

    images = load_image_batch(records, model.input_size)
    features = extract_features(model, images)

    grouped: dict[str, list[int]] = {}
    for i, label in enumerate(labels):
        grouped.setdefault(label, []).append(i)
    stats, excluded = class_statistics(
        {label: features[idx] for label, idx in grouped.items()})

    scorable = [(record, label, i) for i, (record, label) in enumerate(zip(records, labels))
                if label in stats]
    scored = [
        (outlier_score(features[i], stats[label]), record, label)
        for record, label, i in scorable
    ]
    scored.sort(key=lambda entry: (-entry[0], entry[1].id))
    k = math.ceil(flag_fraction * len(scored) - 1e-9)

    items = [
        ReviewItem(
            id=f"ri_{record.id}",
            record_id=record.id,
            path=record.path,
            proposed_label=label,
            granularity=granularity,
            outlier_score=float(score),
            status="pending",
        )
        for score, record, label in scored[:k]
    ]
    if out_path is not None:
        save_queue(items, out_path)
    return items, excluded


def _format_item(item: ReviewItem) -> str:
    pairs = []
    for key in QUEUE_KEYS:
        value = getattr(item, key)
        if value is None:
            continue
        text = repr(value) if isinstance(value, float) else str(value)
        if "\t" in text or "\n" in text:
            raise DataError(f"review item {item.id}: field {key} contains a TAB or newline")
        pairs.append(f"{key}={text}")
    return "\t".join(pairs)


def _parse_item(line: str, lineno: int) -> ReviewItem:
    fields: dict[str, str] = {}
    for chunk in line.split("\t"):
        key, sep, value = chunk.partition("=")
        if not sep or key not in QUEUE_KEYS:
            raise DataError(f"queue line {lineno}: malformed field {chunk!r}")
        fields[key] = value
    try:
        return ReviewItem(
            id=fields["id"],
            record_id=fields["record_id"],
            path=fields["path"],
            proposed_label=fields["proposed_label"],
            granularity=fields["granularity"],
            outlier_score=float(fields["outlier_score"]),
            status=fields.get("status", "pending"),
            verdict_label=fields.get("verdict_label"),
            annotator=fields.get("annotator"),
            timestamp=fields.get("timestamp"),
        )
    except KeyError as exc:
        raise DataError(f"queue line {lineno}: missing field {exc.args[0]}") from None
    except ValueError as exc:
        raise DataError(f"queue line {lineno}: {exc}") from None


def save_queue(items, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            fh.write(_format_item(item) + "\n")


def append_verdict(path, item: ReviewItem) -> None:
    """Durably append one resolved line: flushed and fsynced before returning."""
    if not item.resolved():
        raise UsageError(f"review item {item.id} is not resolved")
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(_format_item(item) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def load_queue(path) -> list[ReviewItem]:
    """Read a queue file, folding superseded lines: latest timestamp wins.

    Lines without a timestamp (pending) are the base state; among equal
    timestamps the later line wins.  Items come back in file order of first
    appearance.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"queue file not found: {path}")
    latest: dict[str, tuple[str, int, ReviewItem]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            item = _parse_item(line, lineno)
            if item.id not in latest:
                order.append(item.id)
                latest[item.id] = (item.timestamp or "", lineno, item)
            else:
                key = (item.timestamp or "", lineno)
                if key >= latest[item.id][:2]:
                    latest[item.id] = (*key, item)
    return [latest[item_id][2] for item_id in order]


def _relabel(record: ImageRecord, verdict_label: str, granularity: str,
             fields_by_class: dict[str, ImageRecord]) -> ImageRecord:
    if granularity == "color":
        return record.with_values(color=verdict_label)
    donor = fields_by_class[verdict_label]
    if granularity == "make":
        return record.with_values(make=donor.make)
    if granularity == "make_model":
        return record.with_values(make=donor.make, model=donor.model)
    return record.with_values(make=donor.make, model=donor.model, year=donor.year)


def apply_verdicts(records, items) -> tuple[list[ImageRecord], list[dict]]:
    """Fold resolved verdicts into a fresh manifest plus an audit log.

    Rejected items remove their record; relabeled items replace the class
    label; accepted and still-pending items leave the record untouched.
    The input list is never modified.  Any relabel target outside the
    manifest-derived vocabulary fails before a single mutation.
    """
    records = list(records)
    by_record_id = {item.record_id: item for item in items}

    granularities = {item.granularity for item in items}
    vocab_by_granularity: dict[str, LabelVocabulary] = {}
    donors: dict[str, dict[str, ImageRecord]] = {}
    for granularity in granularities:
        vocab = LabelVocabulary.from_records(records, granularity)
        vocab_by_granularity[granularity] = vocab
        donors[granularity] = {}
        for record in records:
            label = class_label(record, granularity)
            if label is not None and label not in donors[granularity]:
                donors[granularity][label] = record

    for item in items:
        if item.status == "relabeled":
            if item.verdict_label not in vocab_by_granularity[item.granularity]:
                raise DataError(f"review item {item.id}: verdict label "
                                f"{item.verdict_label!r} is outside the vocabulary")

    output: list[ImageRecord] = []
    audit: list[dict] = []
    for record in records:
        item = by_record_id.get(record.id)
        if item is None or item.status in ("pending", "accepted"):
            output.append(record)
            continue
        if item.status == "rejected":
            audit.append({"record_id": record.id, "action": "removed",
                          "old_label": item.proposed_label, "new_label": None,
                          "annotator": item.annotator, "timestamp": item.timestamp})
            continue
        new_record = _relabel(record, item.verdict_label, item.granularity,
                              donors[item.granularity])
        output.append(new_record)
        audit.append({"record_id": record.id, "action": "relabeled",
                      "old_label": item.proposed_label, "new_label": item.verdict_label,
                      "annotator": item.annotator, "timestamp": item.timestamp})
    return output, audit
