"""Session fixtures: small synthetic datasets and quickly trained models.

The datasets are deliberately tiny (a few classes, a few images) so the
whole suite stays fast; the acceptance tests build their own full-size
runs with their own budgets.
"""

from __future__ import annotations

import numpy as np
import pytest

from mmcr.manifest import LabelVocabulary
from mmcr.models.train import TrainConfig, train
from mmcr.preprocess import PreprocessConfig, preprocess_manifest
from mmcr.synthetic import generate_synthetic


@pytest.fixture(scope="session")
def color_data(tmp_path_factory):
    """3-color dataset, preprocessed with the mask at 64 px."""
    root = tmp_path_factory.mktemp("color_data")
    raw = generate_synthetic(root / "raw", n_classes=3, n_per_class=8,
                             color_mode=True, seed=5)
    config = PreprocessConfig(margin_fraction=0.10, target_size=64,
                              apply_mask=True, mask_fill="mean")
    processed = preprocess_manifest(raw, config, root / "pre")
    return {"root": root, "raw": raw, "processed": processed}


@pytest.fixture(scope="session")
def shape_data(tmp_path_factory):
    """3-shape dataset, preprocessed without the mask at 64 px."""
    root = tmp_path_factory.mktemp("shape_data")
    raw = generate_synthetic(root / "raw", n_classes=3, n_per_class=8,
                             color_mode=False, seed=5)
    config = PreprocessConfig(margin_fraction=0.10, target_size=64, apply_mask=False)
    processed = preprocess_manifest(raw, config, root / "pre")
    return {"root": root, "raw": raw, "processed": processed}


def _quick_config(**overrides) -> TrainConfig:
    base = dict(preset="tiny", epochs=12, batch_size=8, learning_rate=0.1,
                momentum=0.9, lr_decay_epochs=(9,), lr_decay_factor=0.2, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def color_model(color_data):
    records = color_data["processed"]
    vocabulary = LabelVocabulary.from_records(records, "color")
    model, log = train(records, vocabulary, _quick_config())
    return {"model": model, "log": log, "records": records}


@pytest.fixture(scope="session")
def shape_model(shape_data):
    records = shape_data["processed"]
    vocabulary = LabelVocabulary.from_records(records, "make_model")
    model, log = train(records, vocabulary, _quick_config())
    return {"model": model, "log": log, "records": records}


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
