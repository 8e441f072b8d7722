"""Classifier models: architecture, training loop, inference, persistence."""

from .network import (
    PRESETS,
    ClassifierModel,
    Prediction,
    extract_features,
    load_model,
    predict_batch,
    predictions_from_embeddings,
    save_model,
    serialize_model,
)
from .train import TrainConfig, TrainingLog, fine_tune, loss_and_gradients, train

__all__ = [
    "PRESETS",
    "ClassifierModel",
    "Prediction",
    "TrainConfig",
    "TrainingLog",
    "extract_features",
    "fine_tune",
    "load_model",
    "loss_and_gradients",
    "predict_batch",
    "predictions_from_embeddings",
    "save_model",
    "serialize_model",
    "train",
]
