"""Pair verification: embedding distance, threshold calibration, evaluation.

Two images are declared the same class when the Euclidean distance between
their embeddings falls strictly below a threshold.  The threshold is
calibrated on labeled pairs by sweeping every decision-relevant candidate:
the midpoints of consecutive sorted distinct distances, plus 0 (everything
"different") and just above the maximum (everything "same").  The sweep
picks the candidate with the highest accuracy, breaking ties toward the
smallest threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .manifest import ImageRecord, class_label
from .models.data import load_image_batch
from .models.network import ClassifierModel, extract_features

__all__ = [
    "VerificationPair",
    "ThresholdModel",
    "pair_distance",
    "pair_distances",
    "calibrate_threshold",
    "verify_pair",
    "decide",
    "evaluate_verification",
    "VerificationReport",
    "load_pairs",
    "save_pairs",
    "generate_pairs",
    "REFERENCE_VERIFICATION_RESULTS",
]

PAIR_LABELS = ("same", "different")

# Published reference accuracies for the CompCars verification protocol,
# shipped as context only; they come from models this package does not
# ship and are never recomputed here.
REFERENCE_VERIFICATION_RESULTS = [
    {"method": "reference system (fine-tuned)", "easy": 93.00, "medium": 86.18,
     "hard": 80.05, "provenance": "published-reference"},
    {"method": "reference system (no fine-tuning)", "easy": 92.03, "medium": 86.52,
     "hard": 80.17, "provenance": "published-reference"},
    {"method": "Yang et al.", "easy": 83.3, "medium": 82.4, "hard": 76.1,
     "provenance": "published-reference"},
    {"method": "Sochor et al.", "easy": 85.0, "medium": 82.7, "hard": 76.8,
     "provenance": "published-reference"},
]


@dataclass(frozen=True)
class VerificationPair:
    record_a: ImageRecord
    record_b: ImageRecord
    label: str | None = None  # "same" / "different"; None for unlabeled queries

    def __post_init__(self) -> None:
        if self.label is not None and self.label not in PAIR_LABELS:
            raise DataError(f"pair label must be one of {PAIR_LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class ThresholdModel:
    """Calibrated decision threshold plus the statistics behind it."""

    threshold: float
    accuracy: float
    n_same: int
    n_different: int
    histogram_edges: tuple[float, ...]
    histogram_same: tuple[int, ...]
    histogram_different: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "accuracy": self.accuracy,
            "n_same": self.n_same,
            "n_different": self.n_different,
            "histogram_edges": list(self.histogram_edges),
            "histogram_same": list(self.histogram_same),
            "histogram_different": list(self.histogram_different),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ThresholdModel":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(threshold=raw["threshold"], accuracy=raw["accuracy"],
                   n_same=raw["n_same"], n_different=raw["n_different"],
                   histogram_edges=tuple(raw["histogram_edges"]),
                   histogram_same=tuple(raw["histogram_same"]),
                   histogram_different=tuple(raw["histogram_different"]))


def pair_distance(f_a: np.ndarray, f_b: np.ndarray) -> float:
    """Euclidean distance between two embeddings of equal dimension."""
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    if f_a.shape != f_b.shape:
        raise UsageError(f"embedding dimensions differ: {f_a.shape} vs {f_b.shape}")
    return float(np.linalg.norm(f_a - f_b))


def verify_pair(f_a: np.ndarray, f_b: np.ndarray, threshold: float) -> str:
    """"same" iff distance < threshold (strict, so 0 means all-different)."""
    if threshold < 0:
        raise UsageError(f"threshold must be >= 0, got {threshold}")
    return "same" if pair_distance(f_a, f_b) < threshold else "different"


def decide(distances: np.ndarray, threshold: float) -> np.ndarray:
    """Vectorized decision: boolean array, True = same."""
    return np.asarray(distances) < threshold


def calibrate_threshold(distances, labels) -> ThresholdModel:
    """Pick the accuracy-maximizing threshold over the candidate sweep.

    ``labels`` may be booleans (True = same) or the strings "same" /
    "different".  Requires at least one pair of each label.
    """
    distances = np.asarray(distances, dtype=np.float64)
    same = np.asarray([l if isinstance(l, (bool, np.bool_)) else l == "same" for l in labels],
                      dtype=bool)
    if distances.shape != same.shape or distances.ndim != 1:
        raise UsageError("distances and labels must be equal-length 1-d sequences")
    if len(distances) == 0 or same.all() or not same.any():
        raise UsageError("calibration needs at least one pair of each label")

    distinct = np.unique(distances)
    candidates = np.concatenate([
        [0.0],
        (distinct[:-1] + distinct[1:]) / 2.0,
        [np.nextafter(distinct[-1], np.inf)],
    ])
    candidates = np.unique(candidates)

    # accuracy(t) = (#same with d < t  +  #different with d >= t) / n.
    # Evaluated via sorted prefix counts rather than an n x c sweep.
    order = np.argsort(distances, kind="stable")
    sorted_d = distances[order]
    sorted_same = same[order]
    same_prefix = np.concatenate([[0], np.cumsum(sorted_same)])
    diff_prefix = np.concatenate([[0], np.cumsum(~sorted_same)])
    n = len(distances)
    below = np.searchsorted(sorted_d, candidates, side="left")
    correct = same_prefix[below] + (diff_prefix[n] - diff_prefix[below])
    accuracies = correct / n

    best = int(np.argmax(accuracies))  # argmax returns the first = smallest tying candidate
    threshold = float(candidates[best])

    edges = np.histogram_bin_edges(distances, bins=20)
    hist_same, _ = np.histogram(distances[same], bins=edges)
    hist_diff, _ = np.histogram(distances[~same], bins=edges)
    return ThresholdModel(
        threshold=threshold,
        accuracy=float(accuracies[best]),
        n_same=int(same.sum()),
        n_different=int((~same).sum()),
        histogram_edges=tuple(float(e) for e in edges),
        histogram_same=tuple(int(c) for c in hist_same),
        histogram_different=tuple(int(c) for c in hist_diff),
    )


@dataclass
class VerificationReport:
    set_accuracies: dict[str, float]
    set_sizes: dict[str, int]
    threshold: float
    calibration_accuracy: float
    model_digest: str
    context: list[dict]

    def to_dict(self) -> dict:
        return {
            "set_accuracies": self.set_accuracies,
            "set_sizes": self.set_sizes,
            "threshold": self.threshold,
            "calibration_accuracy": self.calibration_accuracy,
            "model_digest": self.model_digest,
            "context": self.context,
        }

    def to_text(self) -> str:
        lines = ["Verification accuracy (same/different at calibrated threshold)",
                 f"model digest: {self.model_digest}",
                 f"threshold: {self.threshold!r} "
                 f"(calibration accuracy {self.calibration_accuracy:.4f})",
                 ""]
        names = list(self.set_accuracies)
        header = "method".ljust(32) + "".join(name.rjust(10) for name in names)
        lines.append(header)
        lines.append("-" * len(header))
        row = "this model (this-run)".ljust(32)
        for name in names:
            row += f"{self.set_accuracies[name] * 100:9.2f}%"
        lines.append(row)
        for ctx in self.context:
            row = f"{ctx['method']} ({ctx['provenance']})".ljust(32)
            for name in names:
                value = ctx.get(name)
                row += f"{value:9.2f}%" if value is not None else " " * 10
            lines.append(row)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        path.with_suffix(".txt").write_text(self.to_text(), encoding="utf-8")


def pair_distances(model: ClassifierModel, pairs: list[VerificationPair]) -> np.ndarray:
    """Distances for a pair list, computing each distinct image's embedding once."""
    unique: dict[str, ImageRecord] = {}
    for pair in pairs:
        unique.setdefault(pair.record_a.id, pair.record_a)
        unique.setdefault(pair.record_b.id, pair.record_b)
    ids = list(unique)
    images = load_image_batch([unique[i] for i in ids], model.input_size)
    features = extract_features(model, images)
    by_id = {record_id: features[i] for i, record_id in enumerate(ids)}
    return np.array([
        np.linalg.norm(by_id[p.record_a.id] - by_id[p.record_b.id]) for p in pairs
    ])


def evaluate_verification(model: ClassifierModel, pair_sets: dict[str, list[VerificationPair]],
                          calibration_pairs: list[VerificationPair]) -> VerificationReport:
    """Calibrate on the calibration pairs, then score each evaluation set.

    Every pair must be labeled.  Calibration never sees the evaluation
    pairs.  The report carries published reference accuracies as static
    context rows, clearly separated from this run's numbers.
    """
    for name, pairs in pair_sets.items():
        if not pairs:
            raise UsageError(f"pair set {name!r} is empty")
        if any(p.label is None for p in pairs):
            raise DataError(f"pair set {name!r} contains unlabeled pairs")
    if not calibration_pairs:
        raise UsageError("calibration pair set is empty")

    cal_distances = pair_distances(model, calibration_pairs)
    cal_labels = [p.label for p in calibration_pairs]
    threshold_model = calibrate_threshold(cal_distances, cal_labels)

    accuracies: dict[str, float] = {}
    sizes: dict[str, int] = {}
    for name, pairs in pair_sets.items():
        distances = pair_distances(model, pairs)
        truth = np.array([p.label == "same" for p in pairs])
        decisions = decide(distances, threshold_model.threshold)
        accuracies[name] = float((decisions == truth).mean())
        sizes[name] = len(pairs)

    return VerificationReport(
        set_accuracies=accuracies,
        set_sizes=sizes,
        threshold=threshold_model.threshold,
        calibration_accuracy=threshold_model.accuracy,
        model_digest=model.digest(),
        context=list(REFERENCE_VERIFICATION_RESULTS),
    )


def save_pairs(pairs: list[tuple[str, str, str]], path) -> None:
    """Write a pair-list file: one ``id_a TAB id_b TAB label`` per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for id_a, id_b, label in pairs:
            if label not in PAIR_LABELS:
                raise DataError(f"pair label must be one of {PAIR_LABELS}, got {label!r}")
            fh.write(f"{id_a}\t{id_b}\t{label}\n")


def load_pairs(path, by_id: dict[str, ImageRecord]) -> list[VerificationPair]:
    """Read a pair-list file, resolving ids against a manifest."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"pair list not found: {path}")
    pairs: list[VerificationPair] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path} line {lineno}: expected 'id_a<TAB>id_b<TAB>label'")
        id_a, id_b, label = parts
        if label not in PAIR_LABELS:
            raise DataError(f"{path} line {lineno}: unknown label {label!r}")
        try:
            pairs.append(VerificationPair(record_a=by_id[id_a], record_b=by_id[id_b],
                                          label=label))
        except KeyError as exc:
            raise DataError(f"{path} line {lineno}: unknown record id {exc.args[0]!r}") from None
    return pairs


def generate_pairs(records, n_pairs: int, seed: int = 0,
                   granularity: str = "make_model") -> list[VerificationPair]:
    """Build a balanced labeled pair set from a manifest (testing utility)."""
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[ImageRecord]] = {}
    for record in records:
        label = class_label(record, granularity)
        if label is not None:
            by_class.setdefault(label, []).append(record)
    classes = [c for c, members in by_class.items() if len(members) >= 2]
    if len(classes) < 2:
        raise UsageError("need at least two classes with two members each")

    pairs: list[VerificationPair] = []
    for i in range(n_pairs):
        if i % 2 == 0:
            cls = classes[int(rng.integers(0, len(classes)))]
            a, b = rng.choice(len(by_class[cls]), size=2, replace=False)
            pairs.append(VerificationPair(by_class[cls][int(a)], by_class[cls][int(b)], "same"))
        else:
            ca, cb = rng.choice(len(classes), size=2, replace=False)
            a = by_class[classes[int(ca)]][int(rng.integers(0, len(by_class[classes[int(ca)]])))]
            b = by_class[classes[int(cb)]][int(rng.integers(0, len(by_class[classes[int(cb)]])))]
            pairs.append(VerificationPair(a, b, "different"))
    return pairs
