"""Acceptance gate: one PASS/FAIL line per criterion.

The lines are written straight to the terminal so they survive output capture.
Criteria 1 and 7 share one desk-scale experiment (about 15-20 minutes on one CPU).
"""
import collections
import time

import numpy as np
import pytest

from mashnet.amu import amu_group, amu_pair
from mashnet.analysis import estimate_key, estimate_rhythm
from mashnet.evaluate import FeatureCache, amu_scorer, average_rank, model_scorer, rank_groups
from mashnet.generation import DESK_WINDOW, audit_candidate, build_dataset, split_indices
from mashnet.mashupdb import build_db
from mashnet.model import ModelConfig, grad_check, lsro_loss
from mashnet.synth import synth_corpus, synth_song
from mashnet.train import TrainConfig, evaluate_split, extract_features, train
from mashnet.transform import pitch_shift, time_stretch

from test_amu import random_features
from test_cli import run_pipeline

DESK_SONGS, DESK_PER_CLASS, DESK_EPOCHS, DESK_LR = 60, 300, 10, 1e-3
HELDOUT_SONGS, RANK_SEEDS, POOL_SIZE = 20, 10, 20
TIME_BUDGET_S = 30 * 60


def announce(capsys, number, passed, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}", flush=True)


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """Train a desk-scale premix model and rank originals on a held-out corpus."""
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    synth_corpus(DESK_SONGS, 7, root / "train")
    db = build_db(root / "train", root / "train" / "manifest.tsv")
    examples = build_dataset(db, DESK_PER_CLASS, np.random.default_rng(7), window=DESK_WINDOW)
    labels = [e.label for e in examples]
    train_idx, val_idx = split_indices(labels, 7)
    config = ModelConfig.desk("premix")
    features = extract_features(db, examples, config.input_frames)
    net, history = train(features, labels, train_idx, val_idx, config,
                         TrainConfig(epochs=DESK_EPOCHS, lr=DESK_LR, seed=7))
    _, val_acc = evaluate_split(net, features[val_idx], np.asarray(labels)[val_idx])

    synth_corpus(HELDOUT_SONGS, 8, root / "test", prefix="test")
    test_db = build_db(root / "test", root / "test" / "manifest.tsv")
    groups = rank_groups(test_db, np.random.default_rng(8), RANK_SEEDS, POOL_SIZE, DESK_WINDOW)
    model_rank = average_rank(model_scorer(net, FeatureCache(test_db, config.input_frames)), groups)
    elapsed = time.perf_counter() - t0
    return {"db": db, "examples": examples, "labels": labels, "split": (train_idx, val_idx),
            "val_acc": val_acc, "history": history, "model_rank": model_rank, "elapsed": elapsed,
            "test_db": test_db, "groups": groups}


def test_criterion_1_separability(desk, capsys):
    rep = desk["model_rank"]
    ok = (desk["val_acc"] >= 0.95 and rep.average_rank <= 1.5 and min(rep.pool_sizes) >= POOL_SIZE
          and len(rep.ranks) == RANK_SEEDS and desk["elapsed"] <= TIME_BUDGET_S)
    announce(capsys, 1, ok, f"val_acc={desk['val_acc']:.4f} (>=0.95)  mean_rank={rep.average_rank:.3f} (<=1.5) "
                            f"over {len(rep.ranks)} seeds x {min(rep.pool_sizes)}  time={desk['elapsed']:.0f}s "
                            f"(<={TIME_BUDGET_S}s)")
    assert ok


def test_criterion_2_lsro_values(capsys):
    uniform = float(lsro_loss(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))[0])
    confident = float(lsro_loss(np.array([[0.9, 0.1]]), np.array([[1.0, 0.0]]))[0])
    err = max(abs(uniform - np.log(2.0)), abs(confident + np.log(0.9)))
    ok = err <= 1e-9
    announce(capsys, 2, ok, f"loss(u,u)={uniform:.12f} loss((.9,.1),(1,0))={confident:.12f} max_err={err:.1e}")
    assert ok


def test_criterion_3_gradients(capsys):
    errors = {}
    for variant in ("premix", "postmix"):
        errors[variant] = grad_check(ModelConfig.tiny(variant), seed=3)
    ok = all(e < 1e-4 for e in errors.values())
    announce(capsys, 3, ok, "max_rel_err " + " ".join(f"{k}={v:.2e}" for k, v in errors.items()) + " (<1e-4)")
    assert ok


def test_criterion_4_transform_covariance(capsys):
    rng = np.random.default_rng(21)
    clips = []
    for _ in range(12):
        stems, _ = synth_song(rng, int(rng.integers(12)), str(rng.choice(["major", "minor"])),
                              float(rng.uniform(90, 150)), seconds=8.0)
        clips.append(stems)
    key_hits = collections.Counter()
    for stems in clips:
        base = estimate_key(stems["harmonic"]).tonic
        for k in (-3, -2, -1, 1, 2, 3):
            key_hits[k] += estimate_key(pitch_shift(stems["harmonic"], k)).tonic == (base + k) % 12
    key_share = {k: v / len(clips) for k, v in key_hits.items()}

    tempo_err = {}
    for r in (0.8, 0.9, 1.1, 1.2):
        errs = []
        for stems in clips[:6]:
            base = estimate_rhythm(stems["percussion"]).tempo_bpm
            got = estimate_rhythm(time_stretch(stems["percussion"], r)).tempo_bpm
            errs.append(abs(got / base / r - 1.0))
        tempo_err[r] = max(errs)
    ok = min(key_share.values()) >= 0.9 and max(tempo_err.values()) <= 0.02
    announce(capsys, 4, ok, "key_hit_rate " + " ".join(f"{k:+d}:{v:.2f}" for k, v in sorted(key_share.items()))
             + " (>=0.90)  tempo_max_rel_err " + " ".join(f"{r}:{e:.4f}" for r, e in tempo_err.items())
             + " (<=0.02)")
    assert ok


def test_criterion_5_matched_guarantee(desk, capsys):
    db = desk["db"]
    matched = [e.candidate for e in desk["examples"] if e.candidate.condition.value == "matched"]
    bad = 0
    for cand in matched:
        a = audit_candidate(db, cand)
        pre_ok = (a["pre_key_distance"] <= 3 and 0.8 - 1e-9 <= a["pre_harmonic_ratio"] <= 1.2 + 1e-9
                  and 0.8 - 1e-9 <= a["pre_percussion_ratio"] <= 1.2 + 1e-9)
        post_ok = (a["post_key_distance"] == 0 and abs(a["post_harmonic_ratio"] - 1.0) <= 1e-9
                   and abs(a["post_percussion_ratio"] - 1.0) <= 1e-9)
        bad += not (pre_ok and post_ok)
    ok = bad == 0 and len(matched) == DESK_PER_CLASS
    announce(capsys, 5, ok, f"{len(matched) - bad}/{len(matched)} matched candidates satisfy the constraints")
    assert ok


def test_criterion_6_proportions(desk, capsys):
    counts = collections.Counter(desk["labels"])
    train_idx, val_idx = desk["split"]
    labels = np.asarray(desk["labels"])
    per_class_val = {lab: int(np.sum(labels[val_idx] == lab)) for lab in counts}
    ok = (all(counts[lab] == DESK_PER_CLASS for lab in ("positive", "negative", "unlabeled"))
          and len(counts) == 3 and len(train_idx) == 4 * len(val_idx)
          and all(v == DESK_PER_CLASS // 5 for v in per_class_val.values())
          and len(set(train_idx) | set(val_idx)) == len(labels))
    announce(capsys, 6, ok, f"labels={dict(sorted(counts.items()))} train={len(train_idx)} val={len(val_idx)} "
                            f"val_per_class={per_class_val}")
    assert ok


def test_criterion_7_baseline(desk, capsys):
    a = random_features(11)
    identity_ok = amu_group(a, a, a) == amu_pair(a, a)
    amu_rank = average_rank(amu_scorer(desk["test_db"]), desk["groups"])
    model_rank = desk["model_rank"]
    ok = identity_ok and model_rank.average_rank < amu_rank.average_rank
    announce(capsys, 7, ok, f"group(a,a,a)==pair(a,a): {identity_ok}  model_rank={model_rank.average_rank:.3f} "
                            f"< amu_rank={amu_rank.average_rank:.3f}")
    assert ok


def test_criterion_8_determinism(tmp_path, capsys):
    first = run_pipeline(tmp_path / "a", seed=13)
    second = run_pipeline(tmp_path / "b", seed=13)
    r1 = (first / "eval" / "report.tsv").read_text()
    r2 = (second / "eval" / "report.tsv").read_text()
    logs_equal = all((first / "runs" / run / "train_log.jsonl").read_text()
                     == (second / "runs" / run / "train_log.jsonl").read_text()
                     for run in ("premix", "postmix", "premix_nolsro", "postmix_nolsro"))
    ok = r1 == r2 and logs_equal
    rows = len(r1.splitlines()) - 1
    announce(capsys, 8, ok, f"report.tsv identical across reruns: {r1 == r2} ({rows} systems), "
                            f"training logs identical: {logs_equal}")
    assert ok
