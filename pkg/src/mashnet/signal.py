"""Audio buffers, WAV I/O, resampling, mixing and the log-mel frontend."""
from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

SAMPLE_RATE = 22050
N_FFT = 2048
HOP = 512
N_MELS = 128
LOG_FLOOR_AMP = 1e-5
LOG_FLOOR = float(np.log(LOG_FLOOR_AMP))
MIX_HEADROOM = 0.95


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono sample buffer. Samples are float64 with nominal range [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip must be mono (1-D samples)")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


@dataclass(frozen=True, eq=False)
class MelSpec:
    """Log-mel matrix of shape (n_frames, n_mels)."""

    values: np.ndarray
    hop: int
    sample_rate: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != N_MELS:
            raise ValueError(f"MelSpec values must be (frames, {N_MELS})")

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# WAV I/O

def load_audio(path) -> AudioClip:
    """Read a PCM WAV file and downmix it to mono at its native rate."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise ValueError(f"unsupported WAV encoding in {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported sample type {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.shape[0] == 0:
        raise ValueError(f"zero-length audio stream in {path}")
    return AudioClip(x, rate)


def write_audio(clip: AudioClip, path) -> int:
    """Write ``clip`` as 16-bit PCM WAV; returns the number of hard-clipped samples."""
    if len(clip) == 0:
        raise ValueError("refusing to write a zero-length clip")
    x = clip.samples
    n_clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, clip.sample_rate, q)
    return n_clipped


# ---------------------------------------------------------------------------
# Resampling and mixing

def resample_ratio(samples: np.ndarray, ratio: float, max_denominator: int = 1000) -> np.ndarray:
    """Band-limited change of sample count by ``ratio`` (output/input length).

    Irrational ratios are approximated by the closest fraction with a
    denominator of at most ``max_denominator``; the output length is exactly
    ``round(len(samples) * ratio)``.
    """
    frac = Fraction(ratio).limit_denominator(max_denominator)
    n_out = int(round(len(samples) * ratio))
    if frac == 1:
        y = np.array(samples, dtype=np.float64)
    else:
        y = resample_poly(samples, frac.numerator, frac.denominator)
    if len(y) >= n_out:
        return y[:n_out]
    return np.pad(y, (0, n_out - len(y)))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    frac = Fraction(int(target_rate), clip.sample_rate)
    y = resample_poly(clip.samples, frac.numerator, frac.denominator)
    n_out = int(round(len(clip) * target_rate / clip.sample_rate))
    y = y[:n_out] if len(y) >= n_out else np.pad(y, (0, n_out - len(y)))
    return AudioClip(y, target_rate)


def to_engine_rate(clip: AudioClip) -> AudioClip:
    return resample(clip, SAMPLE_RATE)


def mix(clips, gains=None) -> AudioClip:
    """Weighted sum of clips, zero-padded to the longest one.

    If the raw sum peaks above 1.0 it is rescaled so the peak is 0.95.
    """
    clips = list(clips)
    if not clips:
        raise ValueError("mix needs at least one clip")
    if gains is None:
        gains = [1.0] * len(clips)
    if len(gains) != len(clips):
        raise ValueError("one gain per clip is required")
    rate = clips[0].sample_rate
    if any(c.sample_rate != rate for c in clips):
        raise ValueError("sample-rate mismatch in mix")
    n = max(len(c) for c in clips)
    out = np.zeros(n)
    for c, g in zip(clips, gains):
        out[: len(c)] += g * c.samples
    peak = np.max(np.abs(out)) if n else 0.0
    if peak > 1.0:
        out *= MIX_HEADROOM / peak
    return AudioClip(out, rate)


def fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    if len(samples) >= n:
        return samples[:n]
    return np.pad(samples, (0, n - len(samples)))


# ---------------------------------------------------------------------------
# Spectral frontend

def frame_count(n_samples: int, win: int = N_FFT, hop: int = HOP) -> int:
    return (n_samples - win) // hop + 1


def stft_magnitude(x: np.ndarray, win: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Uncentered Hann STFT magnitude, shape (frames, win // 2 + 1)."""
    if len(x) < win:
        raise ValueError(f"signal shorter than one window ({len(x)} < {win})")
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    return np.abs(np.fft.rfft(frames * hann(win), axis=1))


@lru_cache(maxsize=8)
def hann(n: int) -> np.ndarray:
    # periodic Hann, sums to a constant under 75% overlap
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT,
                   n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters with unit peak on the HTK mel scale, shape (n_mels, n_fft//2+1)."""
    edges = mel_edges_hz(sample_rate, n_mels)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    return triangle_response(freqs, edges)


def mel_edges_hz(sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))


def triangle_response(freqs: np.ndarray, edges: np.ndarray) -> np.ndarray:
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mel_spectrogram(clip: AudioClip) -> MelSpec:
    mag = stft_magnitude(clip.samples)
    fb = mel_filterbank(clip.sample_rate)
    energies = mag @ fb.T
    values = np.log(np.maximum(energies, LOG_FLOOR_AMP))
    return MelSpec(values, HOP, clip.sample_rate)
