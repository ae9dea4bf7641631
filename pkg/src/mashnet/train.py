"""Feature extraction and the mini-batch LSRO training loop."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .generation import render_stems
from .model import TARGETS, MashNet, ModelConfig, clip_features, lsro_loss, network_inputs, save_checkpoint
from .nn import Adam
from .signal import HOP, N_FFT, SAMPLE_RATE, mix

log = logging.getLogger(__name__)

# feature channel layout: the three stems, then their mix
VOCAL, HARMONIC, PERCUSSION, MIX = range(4)
CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "train_log.jsonl"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0
    use_unlabeled: bool = True


def seconds_for_frames(frames: int) -> float:
    return ((frames - 1) * HOP + N_FFT) / SAMPLE_RATE


def candidate_features(db, cand, frames: int) -> np.ndarray:
    """(4, frames, n_mels) log-mel features: vocal, harmonic, percussion, mix."""
    stems = render_stems(db, cand, max_seconds=seconds_for_frames(frames))
    clips = stems + [mix(stems)]
    return np.stack([clip_features(c, frames) for c in clips]).astype(np.float32)


def extract_features(db, examples, frames: int) -> np.ndarray:
    out = np.empty((len(examples), 4, frames, 128), dtype=np.float32)
    for i, ex in enumerate(examples):
        out[i] = candidate_features(db, ex.candidate, frames)
        if (i + 1) % 100 == 0:
            log.info("features: %d/%d", i + 1, len(examples))
    return out


def variant_slice(features: np.ndarray, variant: str) -> np.ndarray:
    return features[:, :3] if variant == "premix" else features[:, 3:4]


def predict(net: MashNet, features: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Positive-class posteriors for (N, 4, T, n_mels) features."""
    x = variant_slice(features, net.config.variant)
    scores = []
    for i in range(0, len(x), batch_size):
        scores.append(net.forward(network_inputs(x[i:i + batch_size], net.config))[:, 0])
    return np.concatenate(scores) if scores else np.zeros(0)


def evaluate_split(net: MashNet, features, labels):
    """LSRO loss over all examples and accuracy over the labeled (pos/neg) ones."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan"), float("nan")
    p = predict(net, features)
    probs = np.stack([p, 1.0 - p], axis=1)
    targets = np.array([TARGETS[l] for l in labels])
    loss = float(np.mean(lsro_loss(probs, targets)))
    labeled = labels != "unlabeled"
    if not labeled.any():
        return loss, float("nan")
    correct = (p[labeled] > 0.5) == (labels[labeled] == "positive")
    return loss, float(np.mean(correct))


def train(features, labels, train_idx, val_idx, model_config: ModelConfig, cfg: TrainConfig,
          out_dir=None):
    """Adam on the LSRO loss; returns (best-validation model, per-epoch history).

    With ``out_dir`` the best checkpoint and a JSON-lines epoch log are written there.
    """
    labels = np.asarray(labels)
    train_idx = np.asarray(train_idx)
    if not cfg.use_unlabeled:
        train_idx = train_idx[labels[train_idx] != "unlabeled"]
    if len(train_idx) == 0:
        raise TrainingError("empty training set")
    if model_config.input_frames > features.shape[2]:
        raise TrainingError(f"features have {features.shape[2]} frames, model needs {model_config.input_frames}")
    x_all = variant_slice(features, model_config.variant)
    targets = np.array([TARGETS[l] for l in labels], dtype=np.float32)

    net = MashNet(model_config, seed=cfg.seed)
    opt = Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history, best, best_state = [], (-np.inf, -np.inf), None
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, LOG_NAME), "w")
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = train_idx[rng.permutation(len(train_idx))]
            losses, weights = [], []
            for i in range(0, len(order), cfg.batch_size):
                batch = order[i:i + cfg.batch_size]
                net.zero_grad()
                try:
                    loss, _ = net.loss_and_grad(network_inputs(x_all[batch], model_config), targets[batch])
                except FloatingPointError as exc:
                    raise TrainingError(f"diverged at epoch {epoch}, batch {i // cfg.batch_size}: {exc}") from exc
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {i // cfg.batch_size}")
                opt.step(net.gradients())
                losses.append(loss)
                weights.append(len(batch))
            val_loss, val_acc = evaluate_split(net, features[val_idx], labels[val_idx])
            row = {"epoch": epoch, "train_loss": float(np.average(losses, weights=weights)),
                   "val_loss": val_loss, "val_accuracy": val_acc}
            history.append(row)
            log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch, row["train_loss"],
                     val_loss, val_acc)
            if log_fh is not None:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()
            # accuracy first, validation loss breaks ties
            score = (val_acc if np.isfinite(val_acc) else -np.inf,
                     -val_loss if np.isfinite(val_loss) else -np.inf)
            if best_state is None or score > best:
                best = score
                best_state = ({k: v.copy() for k, v in net.parameters().items()},
                              {k: v.copy() for k, v in net.buffers().items()})
                if out_dir is not None:
                    save_checkpoint(net, os.path.join(out_dir, CHECKPOINT_NAME), opt, extra={"epoch": epoch})
    finally:
        if log_fh is not None:
            log_fh.close()

    params, buffers = best_state
    for k, v in net.parameters().items():
        v[...] = params[k]
    for k, v in buffers.items():
        net.set_buffer(k, v)
    return net, history
