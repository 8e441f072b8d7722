"""Batch loading of manifest records into model-ready arrays."""

from __future__ import annotations

import numpy as np

from ..errors import DataError, UsageError
from ..manifest import LabelVocabulary, class_label
from ..preprocess import bilinear_resize, load_image

__all__ = ["load_image_batch", "label_indices"]


def load_image_batch(records, size: int) -> np.ndarray:
    """Load records' images as a uint8 (N, size, size, 3) batch.

    Images that are not already square crops of the requested size are
    rescaled whole; run the preprocess step first for detector-aligned
    crops.
    """
    batch = np.empty((len(records), size, size, 3), dtype=np.uint8)
    for i, record in enumerate(records):
        image = load_image(record.path)
        if image.shape[:2] != (size, size):
            image = bilinear_resize(image, size, size)
        batch[i] = image
    return batch


def label_indices(records, vocabulary: LabelVocabulary) -> np.ndarray:
    """Vocabulary indices for each record, failing on the first bad record."""
    indices = np.empty(len(records), dtype=np.int64)
    for i, record in enumerate(records):
        label = class_label(record, vocabulary.granularity)
        if label is None:
            raise DataError(f"record {record.id} carries no label at granularity "
                            f"{vocabulary.granularity!r}")
        if label not in vocabulary:
            raise DataError(f"record {record.id} has label {label!r} outside the vocabulary")
        indices[i] = vocabulary.index_of(label)
    if len(records) == 0:
        raise UsageError("no records to load")
    return indices
