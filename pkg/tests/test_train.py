import json

import numpy as np
import pytest

from mashnet.generation import DESK_WINDOW, build_dataset, split_indices
from mashnet.model import ModelConfig
from mashnet.train import TrainConfig, TrainingError, extract_features, predict, train


@pytest.fixture(scope="module")
def small_set(db):
    examples = build_dataset(db, 6, np.random.default_rng(0), window=DESK_WINDOW)
    labels = [e.label for e in examples]
    feats = extract_features(db, examples, 16)
    return examples, labels, feats


def test_features_shape(small_set):
    examples, _, feats = small_set
    assert feats.shape == (len(examples), 4, 16, 128)
    assert feats.dtype == np.float32 and np.all(np.isfinite(feats))


def test_training_deterministic_and_logged(small_set, tmp_path):
    _, labels, feats = small_set
    tr, va = split_indices(labels, 0)
    cfg = ModelConfig.tiny("premix", input_frames=16)
    tc = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=1)
    _, h1 = train(feats, labels, tr, va, cfg, tc, tmp_path / "a")
    net2, h2 = train(feats, labels, tr, va, cfg, tc, tmp_path / "b")
    assert h1 == h2
    assert (tmp_path / "a" / "train_log.jsonl").read_text() == (tmp_path / "b" / "train_log.jsonl").read_text()
    rows = [json.loads(line) for line in (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]
    assert set(rows[0]) == {"epoch", "train_loss", "val_loss", "val_accuracy"}
    assert (tmp_path / "a" / "model.ckpt").exists()
    p = predict(net2, feats)
    assert p.shape == (len(labels),) and np.all((p > 0) & (p < 1))


def test_without_unlabeled_variant_runs(small_set):
    _, labels, feats = small_set
    tr, va = split_indices(labels, 0)
    _, hist = train(feats, labels, tr, va, ModelConfig.tiny("postmix", input_frames=16),
                    TrainConfig(epochs=1, batch_size=4, seed=2, use_unlabeled=False))
    assert len(hist) == 1


def test_empty_dataset_rejected(small_set):
    _, labels, feats = small_set
    with pytest.raises(TrainingError):
        train(feats, labels, [], [0], ModelConfig.tiny(input_frames=16), TrainConfig(epochs=1))


def test_divergence_aborts(small_set):
    _, labels, feats = small_set
    bad = feats.copy()
    bad[0, :, 0, 0] = np.inf
    with pytest.raises(TrainingError):
        train(bad, labels, np.arange(len(labels)), [], ModelConfig.tiny(input_frames=16),
              TrainConfig(epochs=1, batch_size=len(labels)))
