"""Classification metrics and benchmark-protocol reports.

Reports pair this run's numbers with published reference accuracies for
the same protocols.  The reference rows are static context shipped with
the package (provenance "published-reference"); they come from systems
this package does not contain and are never recomputed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UsageError
from .manifest import class_label
from .models.data import load_image_batch
from .models.network import ClassifierModel, Prediction, predict_batch
from .verify import VerificationPair, VerificationReport, evaluate_verification

__all__ = [
    "top_k_accuracy",
    "confusion_matrix",
    "benchmark_report",
    "ClassificationReport",
    "PROTOCOLS",
    "REFERENCE_CLASSIFICATION_RESULTS",
]

PROTOCOLS = ("stanford", "compcars_cls", "compcars_verif", "synthetic")

# granularity each classification protocol evaluates at
_PROTOCOL_GRANULARITY = {
    "stanford": "make_model_year",
    "compcars_cls": "make_model",
}

# Published reference accuracies (percent) for context rows; see module
# docstring for provenance.
REFERENCE_CLASSIFICATION_RESULTS = {
    "stanford": [
        {"method": "reference system", "top1": 93.6, "provenance": "published-reference"},
        {"method": "Krause et al.", "top1": 92.8, "provenance": "published-reference"},
        {"method": "Lin et al.", "top1": 91.3, "provenance": "published-reference"},
        {"method": "Zhang et al.", "top1": 88.4, "provenance": "published-reference"},
        {"method": "Xie et al.", "top1": 86.3, "provenance": "published-reference"},
        {"method": "Gosselin et al.", "top1": 82.7, "provenance": "published-reference"},
    ],
    "compcars_cls": [
        {"method": "reference system", "top1": 95.88, "top5": 99.53,
         "provenance": "published-reference"},
        {"method": "GoogLeNet", "top1": 91.2, "top5": 98.1,
         "provenance": "published-reference"},
        {"method": "Overfeat", "top1": 87.9, "top5": 96.9,
         "provenance": "published-reference"},
        {"method": "AlexNet", "top1": 81.9, "top5": 94.0,
         "provenance": "published-reference"},
    ],
    "synthetic": [],
}


def _truth_indices(predictions: list[Prediction], true_labels) -> np.ndarray:
    true_labels = list(true_labels)
    if len(predictions) != len(true_labels):
        raise UsageError(f"{len(predictions)} predictions vs {len(true_labels)} labels")
    if not predictions:
        raise UsageError("cannot score an empty prediction list")
    vocabulary = predictions[0].vocabulary
    return np.array([vocabulary.index_of(label) for label in true_labels])


def top_k_accuracy(predictions: list[Prediction], true_labels, k: int) -> float:
    """Fraction of samples whose true label is among the k top-ranked classes."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    _truth_indices(predictions, true_labels)  # validates lengths and vocabulary
    hits = 0
    for prediction, label in zip(predictions, true_labels):
        if label in (name for name, _ in prediction.top(k)):
            hits += 1
    return hits / len(predictions)


def confusion_matrix(predictions: list[Prediction], true_labels) -> np.ndarray:
    """Count matrix: rows index the true class, columns the top-1 prediction."""
    truth = _truth_indices(predictions, true_labels)
    vocabulary = predictions[0].vocabulary
    n = len(vocabulary)
    matrix = np.zeros((n, n), dtype=np.int64)
    for prediction, t in zip(predictions, truth):
        matrix[t, vocabulary.index_of(prediction.top1)] += 1
    return matrix


@dataclass(frozen=True)
class ClassificationReport:
    protocol: str
    granularity: str
    n_test: int
    n_classes: int
    top1: float
    top5: float
    model_digest: str
    context: list[dict]

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "granularity": self.granularity,
            "n_test": self.n_test,
            "n_classes": self.n_classes,
            "top1": self.top1,
            "top5": self.top5,
            "model_digest": self.model_digest,
            "context": self.context,
        }

    def to_text(self) -> str:
        show_top5 = self.protocol != "stanford"
        lines = [f"Top-1 classification accuracy ({self.protocol} protocol)",
                 f"model digest: {self.model_digest}",
                 f"test samples: {self.n_test}, classes: {self.n_classes}",
                 ""]
        header = "method".ljust(40) + "top-1".rjust(10)
        if show_top5:
            header += "top-5".rjust(10)
        lines.append(header)
        lines.append("-" * len(header))
        row = "this model (this-run)".ljust(40) + f"{self.top1 * 100:9.2f}%"
        if show_top5:
            row += f"{self.top5 * 100:9.2f}%"
        lines.append(row)
        for ctx in self.context:
            row = f"{ctx['method']} ({ctx['provenance']})".ljust(40)
            row += f"{ctx['top1']:9.2f}%"
            if show_top5:
                top5 = ctx.get("top5")
                row += f"{top5:9.2f}%" if top5 is not None else " " * 10
            lines.append(row)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        path.with_suffix(".txt").write_text(self.to_text(), encoding="utf-8")


def benchmark_report(model: ClassifierModel, records, protocol: str,
                     pair_sets: dict[str, list[VerificationPair]] | None = None,
                     calibration_pairs: list[VerificationPair] | None = None,
                     ) -> ClassificationReport | VerificationReport:
    """Score the manifest's test split under one benchmark protocol.

    Classification protocols (stanford, compcars_cls, synthetic) return a
    ClassificationReport; compcars_verif delegates to the verification
    evaluator and needs the pair sets plus calibration pairs.
    """
    if protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")

    if protocol == "compcars_verif":
        if not pair_sets or calibration_pairs is None:
            raise UsageError("compcars_verif needs pair_sets and calibration_pairs")
        return evaluate_verification(model, pair_sets, calibration_pairs)

    granularity = _PROTOCOL_GRANULARITY.get(protocol, model.vocabulary.granularity)
    if model.vocabulary.granularity != granularity:
        raise UsageError(f"protocol {protocol!r} expects a {granularity} model, "
                         f"got {model.vocabulary.granularity}")
    test_records = [r for r in records if r.split == "test"]
    if not test_records:
        raise UsageError("manifest has an empty test split")
    labels = []
    for record in test_records:
        label = class_label(record, granularity)
        if label is None or label not in model.vocabulary:
            raise UsageError(f"record {record.id} does not fit the {protocol!r} "
                             f"vocabulary at granularity {granularity!r}")
        labels.append(label)

    images = load_image_batch(test_records, model.input_size)
    predictions = predict_batch(model, images)
    return ClassificationReport(
        protocol=protocol,
        granularity=granularity,
        n_test=len(test_records),
        n_classes=len(model.vocabulary),
        top1=top_k_accuracy(predictions, labels, 1),
        top5=top_k_accuracy(predictions, labels, min(5, len(model.vocabulary))),
        model_digest=model.digest(),
        context=list(REFERENCE_CLASSIFICATION_RESULTS.get(protocol, [])),
    )
