"""Vehicle make, model and color recognition toolkit.

End-to-end pieces: dataset manifests and adapters, detector-aligned
preprocessing, two small trainable classifiers (make-model and color),
embedding-based pair verification, outlier-driven dataset pruning with a
human review loop, benchmark-protocol evaluation, and an HTTP service.
"""

from .errors import (DataError, IngestError, InternalError, MmcrError,
                     ModelFormatError, PreprocessError, UsageError)
from .manifest import (COLOR_NAMES, GRANULARITIES, BoundingBox, ImageRecord,
                       LabelVocabulary, class_label, load_manifest, records_by_id,
                       save_manifest)
from .models import (PRESETS, ClassifierModel, Prediction, TrainConfig, TrainingLog,
                     extract_features, fine_tune, load_model, predict_batch,
                     predictions_from_embeddings, save_model, train)
from .preprocess import (PreprocessConfig, bilinear_resize, crop_and_resize,
                         elliptical_mask, expand_box, preprocess_manifest,
                         preprocess_record)
from .synthetic import generate_synthetic
from .verify import (ThresholdModel, VerificationPair, calibrate_threshold,
                     evaluate_verification, pair_distance, verify_pair)
from .prune import ReviewItem, apply_verdicts, build_review_queue, load_queue
from .evalharness import benchmark_report, confusion_matrix, top_k_accuracy

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "MmcrError", "UsageError", "DataError", "IngestError", "PreprocessError",
    "ModelFormatError", "InternalError",
    # manifest
    "ImageRecord", "BoundingBox", "LabelVocabulary", "class_label",
    "load_manifest", "save_manifest", "records_by_id",
    "COLOR_NAMES", "GRANULARITIES",
    # models
    "ClassifierModel", "Prediction", "TrainConfig", "TrainingLog", "PRESETS",
    "train", "fine_tune", "predict_batch", "extract_features",
    "predictions_from_embeddings", "save_model", "load_model",
    # preprocess
    "PreprocessConfig", "expand_box", "bilinear_resize", "crop_and_resize",
    "elliptical_mask", "preprocess_record", "preprocess_manifest",
    # synthetic
    "generate_synthetic",
    # verify
    "VerificationPair", "ThresholdModel", "pair_distance", "calibrate_threshold",
    "verify_pair", "evaluate_verification",
    # prune
    "ReviewItem", "build_review_queue", "apply_verdicts", "load_queue",
    # eval
    "top_k_accuracy", "confusion_matrix", "benchmark_report",
]
