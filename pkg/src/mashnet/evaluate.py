"""Binary accuracy and retrieval average rank for mashability scorers.

A scorer is any callable mapping a list of candidates to an array of scores.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .amu import amu_group, beat_sync_features
from .analysis import estimate_rhythm
from .generation import Condition, GenerationError, SEED_BOUND, candidate_from_seed, render_stems
from .signal import mix
from .train import candidate_features, predict

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["system", "accuracy", "average_rank", "n_groups", "pool_size"]


@dataclass
class RankReport:
    ranks: list
    pool_sizes: list
    accuracy: float = float("nan")
    average_rank: float = field(init=False)

    def __post_init__(self):
        if len(self.ranks) != len(self.pool_sizes) or not self.ranks:
            raise ValueError("one rank per non-empty group required")
        for r, n in zip(self.ranks, self.pool_sizes):
            if not 1 <= r <= n + 1:
                raise ValueError(f"rank {r} impossible for pool of {n}")
        self.average_rank = float(np.mean(self.ranks))

    def pool_size_text(self) -> str:
        lo, hi = min(self.pool_sizes), max(self.pool_sizes)
        return str(lo) if lo == hi else f"{lo}-{hi}"


def accuracy_from_scores(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set")
    if np.any((labels != "positive") & (labels != "negative")):
        raise ValueError("accuracy needs positive/negative labels only")
    return float(np.mean((scores > 0.5) == (labels == "positive")))


def accuracy(scorer, examples) -> float:
    """Share of examples where ``score > 0.5`` agrees with the label."""
    examples = list(examples)
    if not examples:
        raise ValueError("accuracy of an empty set")
    scores = scorer([ex.candidate for ex in examples])
    return accuracy_from_scores(scores, [ex.label for ex in examples])


def rank_of(positive_score: float, pool_scores) -> int:
    """1 + number of pool items scoring at least as high (ties count against)."""
    pool_scores = np.asarray(pool_scores, dtype=np.float64)
    if pool_scores.size == 0:
        raise ValueError("empty pool")
    return 1 + int(np.sum(pool_scores >= positive_score))


def average_rank(scorer, groups) -> RankReport:
    """``groups``: list of (positive candidate, [pool candidates])."""
    groups = list(groups)
    if not groups:
        raise ValueError("no groups to rank")
    flat = []
    for pos, pool in groups:
        if not pool:
            raise ValueError("empty pool")
        flat.append(pos)
        flat.extend(pool)
    scores = np.asarray(scorer(flat), dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scorer returned non-finite scores")
    ranks, sizes, i = [], [], 0
    for _, pool in groups:
        ranks.append(rank_of(scores[i], scores[i + 1:i + 1 + len(pool)]))
        sizes.append(len(pool))
        i += 1 + len(pool)
    return RankReport(ranks, sizes)


# ---------------------------------------------------------------------------
# Scorers over a database

class FeatureCache:
    """Model input features per candidate, computed once and shared between systems."""

    def __init__(self, db, frames: int):
        self.db, self.frames = db, frames
        self._cache = {}

    def __call__(self, cands) -> np.ndarray:
        for c in cands:
            if c not in self._cache:
                self._cache[c] = candidate_features(self.db, c, self.frames)
        return np.stack([self._cache[c] for c in cands])


def model_scorer(net, features: FeatureCache):
    return lambda cands: predict(net, features(cands))


def amu_candidate_score(db, cand, weights=None) -> float:
    """AMU group score of the rendered stems on the beat grid of their mix."""
    stems = render_stems(db, cand)
    rhythm = estimate_rhythm(mix(stems))
    feats = [beat_sync_features(s, rhythm) for s in stems]
    return amu_group(*feats) if weights is None else amu_group(*feats, weights=weights)


def amu_scorer(db, weights=None):
    cache = {}

    def score(cands):
        for c in cands:
            if c not in cache:
                cache[c] = amu_candidate_score(db, c, weights)
        return np.array([cache[c] for c in cands])
    return score


def rank_groups(db, rng: np.random.Generator, n_seeds: int, pool_size: int, window):
    """Original candidate plus ``pool_size`` matched candidates for each of ``n_seeds`` vocal seeds."""
    groups = []
    for vocal in db.of_class("vocal"):
        if len(groups) == n_seeds:
            break
        try:
            pos = candidate_from_seed(db, Condition.ORIGINAL, int(rng.integers(SEED_BOUND)), vocal.id, window)
            pool = [candidate_from_seed(db, Condition.MATCHED, int(rng.integers(SEED_BOUND)), vocal.id, window)
                    for _ in range(pool_size)]
        except GenerationError as exc:
            log.info("skipping seed %s: %s", vocal.id, exc)
            continue
        groups.append((pos, pool))
    return groups


def write_report(rows, path):
    """``rows``: list of (system name, RankReport)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for name, rep in rows:
            writer.writerow([name, f"{rep.accuracy:.4f}", f"{rep.average_rank:.4f}", len(rep.ranks),
                             rep.pool_size_text()])


def read_report(path) -> dict[str, dict]:
    with open(path, newline="") as fh:
        return {r["system"]: r for r in csv.DictReader(fh, delimiter="\t")}
