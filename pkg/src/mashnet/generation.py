"""Mashup candidate generation, rendering and labeled dataset construction."""
from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, replace

import numpy as np

from .analysis import KeyEstimate, key_distance, signed_key_shift
from .mashupdb import MAX_KEY_DISTANCE, MashupDB, StemRecord, tempo_ratio_ok
from .signal import N_FFT, AudioClip, mix, write_audio
from .transform import IDENTITY, TransformSpec, apply_spec

FULL_WINDOW = (25.0, 60.0)
DESK_WINDOW = (8.0, 16.0)
RETRY_BUDGET = 50
MAX_OFFSET_S = 1.0
MIN_OVERLAP_S = 1.0
RENDER_MARGIN_S = 0.25
SEED_BOUND = 2 ** 31


class GenerationError(RuntimeError):
    pass


class Condition(str, enum.Enum):
    ORIGINAL = "original"
    MATCHED = "matched"
    UNMATCHED_KEY = "unmatched_key"
    UNMATCHED_TEMPO = "unmatched_tempo"
    UNMATCHED_KEY_TEMPO = "unmatched_key_tempo"

    @property
    def key_control(self) -> bool:
        return self in (Condition.MATCHED, Condition.UNMATCHED_TEMPO)

    @property
    def tempo_control(self) -> bool:
        return self in (Condition.MATCHED, Condition.UNMATCHED_KEY)

    @property
    def label(self) -> str:
        if self is Condition.ORIGINAL:
            return "positive"
        if self is Condition.MATCHED:
            return "unlabeled"
        return "negative"


NEGATIVE_CONDITIONS = (Condition.UNMATCHED_KEY, Condition.UNMATCHED_TEMPO, Condition.UNMATCHED_KEY_TEMPO)
LABELS = ("positive", "negative", "unlabeled")


@dataclass(frozen=True)
class MashupCandidate:
    vocal_id: str
    harmonic_id: str
    percussion_id: str
    condition: Condition
    harmonic_spec: TransformSpec = IDENTITY
    percussion_spec: TransformSpec = IDENTITY
    rng_seed: int = 0
    duration_s: float = FULL_WINDOW[1]
    start_s: float = 0.0

    @property
    def stem_ids(self) -> tuple[str, str, str]:
        return self.vocal_id, self.harmonic_id, self.percussion_id


@dataclass(frozen=True)
class DatasetExample:
    candidate: MashupCandidate
    label: str
    audio_path: str = ""

    def __post_init__(self):
        if self.label != self.candidate.condition.label:
            raise ValueError(f"label {self.label} inconsistent with condition {self.candidate.condition.value}")


# ---------------------------------------------------------------------------
# Candidate generation

def generate_candidate(db: MashupDB, condition, rng: np.random.Generator, vocal_seed: str | None = None,
                       window=FULL_WINDOW) -> MashupCandidate:
    """Draw one candidate; the draw is reproducible from the returned ``rng_seed``."""
    return candidate_from_seed(db, condition, int(rng.integers(SEED_BOUND)), vocal_seed, window)


def candidate_from_seed(db: MashupDB, condition, rng_seed: int, vocal_seed: str | None = None,
                        window=FULL_WINDOW) -> MashupCandidate:
    condition = Condition(condition)
    rng = np.random.default_rng(rng_seed)
    vocals = db.of_class("vocal")
    if not vocals:
        raise GenerationError("database has no vocal stems")
    if vocal_seed is not None and vocal_seed not in {v.id for v in vocals}:
        raise GenerationError(f"unknown vocal seed {vocal_seed!r}")

    for _ in range(RETRY_BUDGET):
        seed = db[vocal_seed] if vocal_seed is not None else vocals[rng.integers(len(vocals))]
        picked = _select(db, condition, seed, rng)
        if picked is None:
            if vocal_seed is not None:
                raise GenerationError(f"no {condition.value} candidates for pinned seed {vocal_seed}")
            continue
        harmonic, percussion, h_spec, p_spec = picked
        duration = float(rng.uniform(*window))
        starts, lo, hi = _layout([seed, harmonic, percussion], [IDENTITY, h_spec, p_spec])
        if hi - lo < MIN_OVERLAP_S:
            if vocal_seed is not None:
                raise GenerationError(f"stems for pinned seed {vocal_seed} barely overlap")
            continue
        # window opens on a vocal downbeat that leaves room for the full duration
        slack = (hi - lo) - duration
        first = seed.downbeat_times[0] if seed.downbeat_times else 0.0
        options = [t - first for t in seed.downbeat_times if t - first <= slack] or [0.0]
        start = float(options[rng.integers(len(options))])
        return MashupCandidate(seed.id, harmonic.id, percussion.id, condition, h_spec, p_spec,
                               rng_seed, duration, start)
    raise GenerationError(f"retry budget exhausted drawing a {condition.value} candidate")


def _select(db: MashupDB, condition: Condition, seed: StemRecord, rng):
    if condition is Condition.ORIGINAL:
        sib = db.siblings(seed.song_id)
        if "harmonic" not in sib or "percussion" not in sib:
            return None
        return sib["harmonic"], sib["percussion"], IDENTITY, IDENTITY

    harmonics = db.query_harmonic(seed.key, seed.tempo_bpm, use_key=condition.key_control,
                                  use_tempo=condition.tempo_control, exclude_song=seed.song_id)
    percussions = db.query_percussion(seed.tempo_bpm, use_tempo=condition.tempo_control,
                                      exclude_song=seed.song_id)
    if not harmonics or not percussions:
        return None
    harmonic = harmonics[rng.integers(len(harmonics))]
    percussion = percussions[rng.integers(len(percussions))]

    pitch = signed_key_shift(harmonic.key, seed.key) if condition.key_control else 0
    if condition.tempo_control:
        h_spec = TransformSpec(seed.tempo_bpm / harmonic.tempo_bpm, pitch)
        p_spec = TransformSpec(seed.tempo_bpm / percussion.tempo_bpm)
    else:
        h_spec, p_spec = TransformSpec(1.0, pitch), IDENTITY
        offset = float(rng.uniform(-MAX_OFFSET_S, MAX_OFFSET_S))
        if rng.random() < 0.5:
            h_spec = replace(h_spec, downbeat_offset_s=offset)
        else:
            p_spec = replace(p_spec, downbeat_offset_s=offset)
    return harmonic, percussion, h_spec, p_spec


def audit_candidate(db: MashupDB, cand: MashupCandidate) -> dict:
    """Key distance and tempo ratio of the selection before and after its transforms."""
    v, h, p = (db[i] for i in cand.stem_ids)
    hs, ps = cand.harmonic_spec, cand.percussion_spec
    shifted = KeyEstimate(int(round(h.key.tonic + hs.pitch_semitones)) % 12, h.key.mode)
    return {
        "pre_key_distance": key_distance(v.key, h.key),
        "pre_harmonic_ratio": v.tempo_bpm / h.tempo_bpm,
        "pre_percussion_ratio": v.tempo_bpm / p.tempo_bpm,
        "post_key_distance": key_distance(v.key, shifted),
        "post_harmonic_ratio": v.tempo_bpm / (h.tempo_bpm * hs.stretch_ratio),
        "post_percussion_ratio": v.tempo_bpm / (p.tempo_bpm * ps.stretch_ratio),
    }


# ---------------------------------------------------------------------------
# Rendering

def _segment(x: np.ndarray, begin: int, n: int) -> np.ndarray:
    out = np.zeros(n)
    lo, hi = max(begin, 0), min(begin + n, len(x))
    if hi > lo:
        out[lo - begin:hi - begin] = x[lo:hi]
    return out


def _layout(recs, specs):
    """Start of each transformed stem relative to the vocal, with downbeats aligned,
    and the (lo, hi) bounds of their common overlap."""
    starts, lengths = [], []
    for rec, spec in zip(recs, specs):
        first_db = rec.downbeat_times[0] / spec.stretch_ratio if rec.downbeat_times else 0.0
        starts.append(-first_db)
        lengths.append(rec.duration_s / spec.stretch_ratio)
    starts = [s - starts[0] for s in starts]
    return starts, max(starts), min(s + d for s, d in zip(starts, lengths))


def render_stems(db: MashupDB, cand: MashupCandidate, max_seconds: float | None = None) -> list[AudioClip]:
    """Transformed, downbeat-aligned, equal-length (vocal, harmonic, percussion) clips.

    Stems are placed so their first downbeats coincide with the vocal's; the
    result starts ``cand.start_s`` into their common overlap and lasts at most
    ``cand.duration_s``.  A stem with a downbeat offset is shifted inside
    that window afterwards.
    ``max_seconds`` renders only a prefix of the mashup: sources are cut to
    the span they contribute (plus a margin) before being transformed.
    """
    specs = (IDENTITY, cand.harmonic_spec, cand.percussion_spec)
    recs = [db[i] for i in cand.stem_ids]
    starts, lo, hi = _layout(recs, specs)
    lo += cand.start_s
    if hi - lo < MIN_OVERLAP_S:
        raise GenerationError(f"stems overlap for only {max(hi - lo, 0.0):.2f} s")
    seconds = min(hi - lo, cand.duration_s)
    if max_seconds is not None:
        seconds = min(seconds, max_seconds)
    sr = db.load_clip(recs[0]).sample_rate
    n = int(round(seconds * sr))

    out = []
    for rec, spec, start in zip(recs, specs, starts):
        source = db.load_clip(rec)
        ratio = spec.stretch_ratio
        begin = lo - start - spec.downbeat_offset_s  # transformed-time position of the window
        cut0 = 0
        if max_seconds is not None:
            cut0 = max(0, int((begin - RENDER_MARGIN_S) * ratio * sr))
            cut1 = min(len(source.samples), int((begin + seconds + RENDER_MARGIN_S) * ratio * sr) + 1)
            if cut1 - cut0 >= N_FFT:
                source = source.with_samples(source.samples[cut0:cut1])
            else:
                cut0 = 0
        clip = apply_spec(source, replace(spec, downbeat_offset_s=0.0))
        offset = int(round(begin * sr)) - int(round(cut0 / ratio))
        out.append(AudioClip(_segment(clip.samples, offset, n), sr))
    return out


def render(db: MashupDB, cand: MashupCandidate, max_seconds: float | None = None) -> AudioClip:
    return mix(render_stems(db, cand, max_seconds))


# ---------------------------------------------------------------------------
# Datasets

def build_dataset(db: MashupDB, n_per_class: int, rng: np.random.Generator,
                  window=FULL_WINDOW) -> list[DatasetExample]:
    """Equal numbers of positive, negative and unlabeled examples.

    Negatives are split evenly over the three unmatched strategies with the
    remainder going to unmatched key & tempo.
    """
    base = n_per_class // 3
    plan = ([Condition.ORIGINAL] * n_per_class
            + [Condition.UNMATCHED_KEY] * base
            + [Condition.UNMATCHED_TEMPO] * base
            + [Condition.UNMATCHED_KEY_TEMPO] * (n_per_class - 2 * base)
            + [Condition.MATCHED] * n_per_class)
    seeds = rng.integers(SEED_BOUND, size=len(plan))
    return [DatasetExample(candidate_from_seed(db, cond, int(s), window=window), cond.label)
            for cond, s in zip(plan, seeds)]


def split_indices(labels, seed: int, val_share: int = 5):
    """Stratified 4:1 train/validation split; returns (train_idx, val_idx)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val = [], []
    for lab in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(len(idx) / val_share))
        val.extend(idx[:n_val].tolist())
        train.extend(idx[n_val:].tolist())
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(val, dtype=int))


MANIFEST_COLUMNS = ["label", "condition", "vocal_id", "harmonic_id", "percussion_id",
                    "harmonic_spec", "percussion_spec", "rng_seed", "duration_s", "start_s", "audio_path"]


def write_manifest(examples, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for ex in examples:
            c = ex.candidate
            writer.writerow([ex.label, c.condition.value, c.vocal_id, c.harmonic_id, c.percussion_id,
                             c.harmonic_spec.to_text(), c.percussion_spec.to_text(), c.rng_seed,
                             repr(c.duration_s), repr(c.start_s), ex.audio_path])


def read_manifest(path) -> list[DatasetExample]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    out = []
    for r in rows:
        cand = MashupCandidate(r["vocal_id"], r["harmonic_id"], r["percussion_id"], Condition(r["condition"]),
                               TransformSpec.from_text(r["harmonic_spec"]),
                               TransformSpec.from_text(r["percussion_spec"]),
                               int(r["rng_seed"]), float(r["duration_s"]), float(r["start_s"]))
        out.append(DatasetExample(cand, r["label"], r["audio_path"]))
    return out


def render_dataset(db: MashupDB, examples, out_dir) -> list[DatasetExample]:
    """Render each example's mix to ``out_dir/audio``; returns examples with audio paths set."""
    os.makedirs(os.path.join(out_dir, "audio"), exist_ok=True)
    out = []
    for i, ex in enumerate(examples):
        rel = os.path.join("audio", f"{i:05d}_{ex.candidate.condition.value}.wav")
        write_audio(render(db, ex.candidate), os.path.join(out_dir, rel))
        out.append(replace(ex, audio_path=rel))
    return out
