"""Rule-based mashability baseline in the spirit of AutoMashUpper.

Each stem is summarized per beat (chroma, sub-beat onset pattern, band
energies) and pairs are scored by a weighted sum of harmonic and rhythmic
similarity and spectral complementarity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import RhythmEstimate, chroma_frames, onset_envelope
from .signal import hann

SUB_BEATS = 4
N_BANDS = 8
BAND_RANGE_HZ = (40.0, 11025.0)
MIN_BEATS = 4
DEFAULT_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)
SYNC_CHROMA_WIN = 4096
SYNC_HOP = 512


@dataclass(frozen=True, eq=False)
class BeatSyncFeatures:
    chroma: np.ndarray   # (n_beats, 12), rows scaled to unit max
    onsets: np.ndarray   # (n_beats, SUB_BEATS)
    bands: np.ndarray    # (n_beats, N_BANDS)

    def __post_init__(self):
        n = self.chroma.shape[0]
        if self.onsets.shape[0] != n or self.bands.shape[0] != n:
            raise ValueError("feature matrices must have one row per beat")
        if self.chroma.shape[1] != 12:
            raise ValueError("chroma rows need 12 pitch classes")

    @property
    def n_beats(self) -> int:
        return self.chroma.shape[0]

    def head(self, n: int) -> "BeatSyncFeatures":
        return BeatSyncFeatures(self.chroma[:n], self.onsets[:n], self.bands[:n])


def band_edges(n_bands: int = N_BANDS) -> np.ndarray:
    return np.geomspace(*BAND_RANGE_HZ, n_bands + 1)


def _per_beat(values, times, beats, agg=np.mean):
    """Aggregate frame rows falling in each [beat_i, beat_i+1) interval."""
    idx = np.searchsorted(beats, times, side="right") - 1
    out = np.zeros((len(beats) - 1, values.shape[1]))
    for b in range(len(beats) - 1):
        sel = idx == b
        if sel.any():
            out[b] = agg(values[sel], axis=0)
    return out


def beat_sync_features(clip, rhythm: RhythmEstimate) -> BeatSyncFeatures:
    """Per-beat chroma, 4-bin onset pattern and 8 log-spaced band energies."""
    beats = np.asarray(rhythm.beat_times, dtype=np.float64)
    if len(beats) < MIN_BEATS + 1:
        raise ValueError(f"need at least {MIN_BEATS} beats, got {max(len(beats) - 1, 0)}")
    sr = clip.sample_rate

    chroma, ctimes = chroma_frames(clip, SYNC_CHROMA_WIN, SYNC_HOP)
    chroma = _per_beat(chroma, ctimes, beats)
    peak = chroma.max(axis=1, keepdims=True)
    chroma = np.divide(chroma, peak, out=np.zeros_like(chroma), where=peak > 0)

    env, fps = onset_envelope(clip)
    etimes = np.arange(len(env)) / fps
    onsets = np.zeros((len(beats) - 1, SUB_BEATS))
    for b in range(len(beats) - 1):
        # bins centred on the subdivisions so onsets at the beat land in bin 0
        step = (beats[b + 1] - beats[b]) / SUB_BEATS
        edges = beats[b] + (np.arange(SUB_BEATS + 1) - 0.5) * step
        slot = np.searchsorted(edges, etimes, side="right") - 1
        for k in range(SUB_BEATS):
            sel = slot == k
            if sel.any():
                onsets[b, k] = env[sel].mean()

    x = clip.samples
    win = SYNC_CHROMA_WIN
    if len(x) < win:
        x = np.pad(x, (0, win - len(x)))
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::SYNC_HOP]
    power = np.abs(np.fft.rfft(frames * hann(win), axis=1)) ** 2
    freqs = np.fft.rfftfreq(win, 1.0 / sr)
    edges = band_edges()
    which = np.searchsorted(edges, freqs, side="right") - 1
    energy = np.zeros((len(frames), N_BANDS))
    for k in range(N_BANDS):
        energy[:, k] = power[:, which == k].sum(axis=1)
    ftimes = (np.arange(len(frames)) * SYNC_HOP + win / 2) / sr
    bands = np.log1p(_per_beat(energy, ftimes, beats))
    return BeatSyncFeatures(chroma, onsets, bands)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with exactly-rounded sums (bitwise symmetric in a, b)."""
    a, b = a.ravel(), b.ravel()
    na = math.sqrt(math.fsum(a * a))
    nb = math.sqrt(math.fsum(b * b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(0.0, math.fsum(a * b) / (na * nb)))


def harmonic_term(a: np.ndarray, b: np.ndarray) -> float:
    return max(_cosine(a, np.roll(b, k, axis=1)) for k in range(12))


def amu_terms(a: BeatSyncFeatures, b: BeatSyncFeatures) -> tuple[float, float, float]:
    """(harmonic, rhythmic, spectral balance) over the common beat span."""
    n = min(a.n_beats, b.n_beats)
    if n == 0:
        raise ValueError("no overlapping beats")
    a, b = a.head(n), b.head(n)
    return harmonic_term(a.chroma, b.chroma), _cosine(a.onsets, b.onsets), 1.0 - _cosine(a.bands, b.bands)


def amu_pair(a: BeatSyncFeatures, b: BeatSyncFeatures, weights=DEFAULT_WEIGHTS) -> float:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (3,) or np.any(w < 0) or w.sum() == 0:
        raise ValueError("weights must be three nonnegative numbers, not all zero")
    w = w / w.sum()
    terms = amu_terms(a, b)
    # fixed term order keeps the result independent of argument order
    return float(math.fsum(wi * t for wi, t in zip(w, terms)))


def amu_group(vocal, harmonic, percussion, weights=DEFAULT_WEIGHTS) -> float:
    """Mean pairwise score of the three stems."""
    pairs = (amu_pair(vocal, harmonic, weights), amu_pair(vocal, percussion, weights),
             amu_pair(harmonic, percussion, weights))
    return math.fsum(sorted(pairs)) / 3.0
