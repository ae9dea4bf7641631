"""Key, tempo, beat and downbeat estimation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .signal import AudioClip, hann

PITCH_NAMES = ["C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B"]

# Krumhansl-Kessler probe-tone profiles, tonic first
MAJOR_PROFILE = np.array([6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88])
MINOR_PROFILE = np.array([6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17])

MIN_KEY_SECONDS = 2.0
MIN_RHYTHM_SECONDS = 5.0
CHROMA_WIN = 8192
CHROMA_HOP = 2048
CHROMA_FMIN, CHROMA_FMAX = 55.0, 5000.0
CONFIDENCE_SCALE = 0.1

ONSET_WIN = 1024
ONSET_HOP = 256
TEMPO_MIN, TEMPO_MAX = 60.0, 180.0
PREFERRED_MIN, PREFERRED_MAX = 80.0, 160.0
# log-normal tempo prior over the preferred range; centred above its geometric
# mean so kick/snare patterns near 160 BPM are not read at half tempo
PRIOR_CENTER_BPM = 130.0
PRIOR_WIDTH_OCTAVES = 0.7
ENV_SMOOTH_FRAMES = 2.0
BEATS_PER_BAR = 4
LOW_BAND_HZ = 200.0


@dataclass(frozen=True)
class KeyEstimate:
    tonic: int
    mode: str = "major"
    confidence: float = 1.0

    def __post_init__(self):
        if not 0 <= self.tonic <= 11:
            raise ValueError(f"tonic {self.tonic} outside 0..11")
        if self.mode not in ("major", "minor"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def name(self) -> str:
        return f"{PITCH_NAMES[self.tonic]} {self.mode}"


@dataclass(frozen=True)
class RhythmEstimate:
    tempo_bpm: float
    beat_times: np.ndarray = field(repr=False)
    downbeat_times: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# Key

def chroma_frames(clip: AudioClip, win: int = CHROMA_WIN, hop: int = CHROMA_HOP):
    """Per-frame 12-bin pitch-class energies and the frame centre times."""
    x = clip.samples
    if len(x) < win:
        x = np.pad(x, (0, win - len(x)))
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    power = np.abs(np.fft.rfft(frames * hann(win), axis=1)) ** 2
    freqs = np.fft.rfftfreq(win, 1.0 / clip.sample_rate)
    band = (freqs >= CHROMA_FMIN) & (freqs <= CHROMA_FMAX)
    midi = 69.0 + 12.0 * np.log2(freqs[band] / 440.0)
    nearest = np.round(midi)
    # bins far from a tempered pitch contribute little
    weight = np.exp(-0.5 * ((midi - nearest) / 0.2) ** 2)
    pc = nearest.astype(int) % 12
    fold = np.zeros((band.sum(), 12))
    fold[np.arange(len(pc)), pc] = weight
    times = (np.arange(len(frames)) * hop + win / 2) / clip.sample_rate
    return power[:, band] @ fold, times


def chromagram(clip: AudioClip) -> np.ndarray:
    """Mean 12-bin pitch-class energy profile (index 0 = C)."""
    return chroma_frames(clip)[0].mean(axis=0)


def key_scores(chroma: np.ndarray) -> np.ndarray:
    """Pearson correlation against all 24 templates; rows (major, minor) x 12 tonics."""
    scores = np.empty((2, 12))
    for m, profile in enumerate((MAJOR_PROFILE, MINOR_PROFILE)):
        for tonic in range(12):
            scores[m, tonic] = np.corrcoef(chroma, np.roll(profile, tonic))[0, 1]
    return scores


def estimate_key(clip: AudioClip) -> KeyEstimate:
    if clip.duration < MIN_KEY_SECONDS:
        raise ValueError(f"clip too short for key estimation ({clip.duration:.2f} s)")
    chroma = chromagram(clip)
    if chroma.sum() <= 1e-8 or np.ptp(chroma) <= 1e-12 * chroma.sum():
        raise ValueError("no tonal energy in clip")
    scores = key_scores(chroma)
    flat = np.sort(scores.ravel())
    mode, tonic = np.unravel_index(np.argmax(scores), scores.shape)
    # a flat (noise-like) profile makes every template margin meaningless
    tonalness = 1.0 - np.exp(np.mean(np.log(chroma + 1e-12))) / np.mean(chroma)
    margin = (flat[-1] - flat[-2]) * tonalness
    confidence = float(np.clip(np.tanh(margin / CONFIDENCE_SCALE), 0.0, 1.0))
    return KeyEstimate(int(tonic), ("major", "minor")[mode], confidence)


def key_distance(a: KeyEstimate, b: KeyEstimate) -> int:
    """Circular semitone distance between tonics (mode ignored)."""
    d = abs(a.tonic - b.tonic) % 12
    return min(d, 12 - d)


def signed_key_shift(source: KeyEstimate, target: KeyEstimate) -> int:
    """Smallest signed shift (semitones, in [-5, 6]) taking source's tonic onto target's."""
    d = (target.tonic - source.tonic) % 12
    return d - 12 if d > 6 else d


# ---------------------------------------------------------------------------
# Rhythm

def _onset_spectrogram(x: np.ndarray) -> np.ndarray:
    pad = ONSET_WIN // 2
    xp = np.pad(x, (pad, pad))
    frames = np.lib.stride_tricks.sliding_window_view(xp, ONSET_WIN)[::ONSET_HOP]
    return np.abs(np.fft.rfft(frames * hann(ONSET_WIN), axis=1))


def onset_envelope(clip: AudioClip) -> tuple[np.ndarray, float]:
    """Half-wave rectified log spectral flux; frame i is centred at i * ONSET_HOP."""
    mag = _onset_spectrogram(clip.samples)
    logmag = np.log1p(100.0 * mag)
    flux = np.maximum(np.diff(logmag, axis=0), 0.0).sum(axis=1)
    env = np.concatenate(([0.0], flux))
    return env, clip.sample_rate / ONSET_HOP


def _octave_weight(bpm):
    d = np.log2(np.asarray(bpm) / PRIOR_CENTER_BPM)
    return np.exp(-0.5 * (d / PRIOR_WIDTH_OCTAVES) ** 2)


def _refine_peak(acf: np.ndarray, lag: int) -> float:
    if 0 < lag < len(acf) - 1:
        a, b, c = acf[lag - 1], acf[lag], acf[lag + 1]
        denom = a - 2.0 * b + c
        if denom < 0:
            return lag + 0.5 * (a - c) / denom
    return float(lag)


def tempo_from_envelope(env: np.ndarray, fps: float) -> float:
    # smoothing keeps differently shaped onsets (kick vs snare) from favouring bar-level lags
    e = gaussian_filter1d(env, ENV_SMOOTH_FRAMES)
    e = e - e.mean()
    n = len(e)
    spectrum = np.fft.rfft(e, 2 * n)
    acf = np.fft.irfft(np.abs(spectrum) ** 2)[:n] / n
    lo = int(np.floor(60.0 * fps / TEMPO_MAX))
    hi = min(int(np.ceil(60.0 * fps / TEMPO_MIN)), n - 2)
    lags = np.arange(max(lo, 1), hi + 1)
    bpms = 60.0 * fps / lags
    weights = _octave_weight(bpms)
    valid = (bpms >= TEMPO_MIN) & (bpms <= TEMPO_MAX)
    score = np.where(valid, np.maximum(acf[lags], 0.0) * weights, -np.inf)
    best = int(lags[np.argmax(score)])
    if acf[best] <= 0:
        raise ValueError("onset envelope has no periodicity")
    return 60.0 * fps / _refine_peak(acf, best)


def _beat_phase(env: np.ndarray, period: float) -> float:
    frames = np.arange(len(env))
    phases = np.arange(0.0, period, 0.25)
    ks = np.arange(int((len(env) - 1) / period) + 1)
    grid = phases[:, None] + ks[None, :] * period
    scores = np.where(grid <= len(env) - 1, np.interp(grid, frames, env), 0.0).sum(axis=1)
    return float(phases[np.argmax(scores)])


def _low_band_energy(clip: AudioClip, times: np.ndarray) -> np.ndarray:
    mag = _onset_spectrogram(clip.samples)
    freqs = np.fft.rfftfreq(ONSET_WIN, 1.0 / clip.sample_rate)
    low = (mag[:, freqs < LOW_BAND_HZ] ** 2).sum(axis=1)
    idx = np.round(times * clip.sample_rate / ONSET_HOP).astype(int)
    span = max(1, int(round(0.06 * clip.sample_rate / ONSET_HOP)))
    return np.array([low[i:i + span].sum() for i in idx])


def estimate_rhythm(clip: AudioClip) -> RhythmEstimate:
    if clip.duration < MIN_RHYTHM_SECONDS:
        raise ValueError(f"clip too short for rhythm estimation ({clip.duration:.2f} s)")
    env, fps = onset_envelope(clip)
    if np.ptp(env) <= 1e-9:
        raise ValueError("flat onset envelope")
    tempo = tempo_from_envelope(env, fps)
    period = 60.0 * fps / tempo
    phase = _beat_phase(env, period)
    n_beats = int((len(env) - 1 - phase) / period) + 1
    beat_frames = phase + period * np.arange(n_beats)
    beat_times = beat_frames / fps
    beat_times = beat_times[beat_times < clip.duration]
    downbeats = beat_times
    if len(beat_times) >= BEATS_PER_BAR:
        energy = _low_band_energy(clip, beat_times)
        bar_scores = [energy[q::BEATS_PER_BAR].mean() for q in range(BEATS_PER_BAR)]
        downbeats = beat_times[int(np.argmax(bar_scores))::BEATS_PER_BAR]
    return RhythmEstimate(float(tempo), beat_times, downbeats)
