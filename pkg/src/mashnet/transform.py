"""Tempo and key adjustment of stems with a phase vocoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import AudioClip, fit_length, hann, resample_ratio

PV_WIN = 2048
PV_HOP = 512
MIN_RATIO, MAX_RATIO = 0.5, 2.0
MAX_SEMITONES = 12.0


@dataclass(frozen=True)
class TransformSpec:
    stretch_ratio: float = 1.0
    pitch_semitones: float = 0.0
    downbeat_offset_s: float = 0.0

    def __post_init__(self):
        if not MIN_RATIO <= self.stretch_ratio <= MAX_RATIO:
            raise ValueError(f"stretch_ratio {self.stretch_ratio} outside [{MIN_RATIO}, {MAX_RATIO}]")
        if abs(self.pitch_semitones) > MAX_SEMITONES:
            raise ValueError(f"pitch shift {self.pitch_semitones} exceeds {MAX_SEMITONES} semitones")

    @property
    def is_identity(self) -> bool:
        return self.stretch_ratio == 1.0 and self.pitch_semitones == 0 and self.downbeat_offset_s == 0

    def to_text(self) -> str:
        return f"{self.stretch_ratio!r},{self.pitch_semitones!r},{self.downbeat_offset_s!r}"

    @classmethod
    def from_text(cls, text: str) -> "TransformSpec":
        ratio, pitch, offset = (float(v) for v in text.split(","))
        return cls(ratio, pitch, offset)


IDENTITY = TransformSpec()


def _stft(x: np.ndarray) -> np.ndarray:
    pad = PV_WIN // 2
    xp = np.pad(x, (pad, pad + PV_HOP))
    frames = np.lib.stride_tricks.sliding_window_view(xp, PV_WIN)[::PV_HOP]
    return np.fft.rfft(frames * hann(PV_WIN), axis=1)


def _istft(spec: np.ndarray, n_out: int) -> np.ndarray:
    window = hann(PV_WIN)
    frames = np.fft.irfft(spec, n=PV_WIN, axis=1) * window
    n = PV_HOP * (len(frames) - 1) + PV_WIN
    out = np.zeros(n)
    norm = np.zeros(n)
    w2 = window ** 2
    for i, frame in enumerate(frames):
        s = i * PV_HOP
        out[s:s + PV_WIN] += frame
        norm[s:s + PV_WIN] += w2
    out /= np.maximum(norm, 1e-3 * w2.max())
    return fit_length(out[PV_WIN // 2:], n_out)


def _peak_regions(mag: np.ndarray) -> np.ndarray:
    """Index of the governing spectral peak for every bin."""
    left = np.concatenate(([-np.inf, -np.inf], mag[:-2]))
    left1 = np.concatenate(([-np.inf], mag[:-1]))
    right1 = np.concatenate((mag[1:], [-np.inf]))
    right = np.concatenate((mag[2:], [-np.inf, -np.inf]))
    peaks = np.flatnonzero((mag > left) & (mag >= left1) & (mag > right1) & (mag >= right))
    if peaks.size == 0:
        return np.arange(mag.size)
    bounds = (peaks[:-1] + peaks[1:]) / 2.0
    return peaks[np.searchsorted(bounds, np.arange(mag.size))]


def _vocode(x: np.ndarray, ratio: float) -> np.ndarray:
    spec = _stft(x)
    n_bins = spec.shape[1]
    steps = np.arange(0.0, spec.shape[0] - 1, ratio)
    omega = 2.0 * np.pi * PV_HOP * np.arange(n_bins) / PV_WIN
    mags = np.abs(spec)
    phases = np.angle(spec)
    acc = phases[0].copy()
    out = np.empty((len(steps), n_bins), dtype=np.complex128)
    for t, step in enumerate(steps):
        i = int(step)
        frac = step - i
        mag = (1.0 - frac) * mags[i] + frac * mags[i + 1]
        # identity phase locking: bins follow the phase of their region's peak
        peak_of = _peak_regions(mag)
        locked = acc[peak_of] + phases[i] - phases[i][peak_of]
        out[t] = mag * np.exp(1j * locked)
        dphi = phases[i + 1] - phases[i] - omega
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        acc += omega + dphi
    return _istft(out, int(round(len(x) / ratio)))


def time_stretch(clip: AudioClip, ratio: float) -> AudioClip:
    """Speed up by ``ratio`` (output duration = input duration / ratio)."""
    if not MIN_RATIO <= ratio <= MAX_RATIO:
        raise ValueError(f"stretch ratio {ratio} outside [{MIN_RATIO}, {MAX_RATIO}]")
    if ratio == 1.0:
        return clip
    return clip.with_samples(_vocode(clip.samples, ratio))


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Scale every frequency by 2**(semitones/12), keeping the duration."""
    if abs(semitones) > MAX_SEMITONES:
        raise ValueError(f"pitch shift {semitones} exceeds {MAX_SEMITONES} semitones")
    if semitones == 0:
        return clip
    factor = 2.0 ** (semitones / 12.0)
    longer = time_stretch(clip, 1.0 / factor)
    y = resample_ratio(longer.samples, 1.0 / factor)
    return clip.with_samples(fit_length(y, len(clip)))


def shift_start(clip: AudioClip, offset_s: float) -> AudioClip:
    """Delay (positive) with leading silence or advance (negative) by trimming the head."""
    n = int(round(offset_s * clip.sample_rate))
    if n >= 0:
        return clip.with_samples(np.concatenate((np.zeros(n), clip.samples)))
    if -n >= len(clip):
        raise ValueError("negative offset trims the whole clip")
    return clip.with_samples(clip.samples[-n:])


def apply_spec(clip: AudioClip, spec: TransformSpec) -> AudioClip:
    out = pitch_shift(clip, spec.pitch_semitones)
    out = time_stretch(out, spec.stretch_ratio)
    if spec.downbeat_offset_s:
        out = shift_start(out, spec.downbeat_offset_s)
    return out
