"""Deterministic synthetic stem corpus: vocal-like lead, chord accompaniment, drums.

Each song gets a sampled key, mode, tempo and chord progression.  The three
stems share one beat grid, so sibling stems are mutually compatible while
stems of different songs generally are not.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .signal import SAMPLE_RATE, AudioClip, write_audio

MAJOR_SCALE = [0, 2, 4, 5, 7, 9, 11]
MINOR_SCALE = [0, 2, 3, 5, 7, 8, 10]

# scale-degree roots (0-based) of four-bar progressions
MAJOR_PROGRESSIONS = [[0, 4, 5, 3], [0, 3, 4, 3], [0, 5, 3, 4], [0, 2, 3, 4], [0, 3, 0, 4], [0, 4, 3, 4]]
MINOR_PROGRESSIONS = [[0, 3, 4, 0], [0, 5, 3, 4], [0, 3, 0, 4], [0, 5, 6, 4], [0, 2, 3, 4]]

TEMPO_RANGE = (70.0, 170.0)
MINOR_SHARE = 0.3
SONG_SECONDS = 20.0


@dataclass
class SongTruth:
    song_id: str
    tonic: int
    mode: str
    tempo_bpm: float
    first_downbeat_s: float


def _midi_hz(m):
    return 440.0 * 2.0 ** ((np.asarray(m, dtype=np.float64) - 69.0) / 12.0)


def _chord(scale, degree):
    """Triad (semitones above the tonic) built on a scale degree."""
    notes = [scale[(degree + k) % 7] + 12 * ((degree + k) // 7) for k in (0, 2, 4)]
    if scale is MINOR_SCALE and degree == 4:
        notes[1] += 1  # harmonic-minor dominant (raised leading tone)
    return notes


def _envelope(n, sr, attack=0.01, release=0.08):
    env = np.ones(n)
    a = min(n, max(1, int(attack * sr)))
    r = min(n - a, max(1, int(release * sr)))
    env[:a] = np.linspace(0.0, 1.0, a)
    if r > 0:
        env[n - r:] *= np.linspace(1.0, 0.0, r)
    return env


def _add(buf, start, sig):
    start = int(start)
    if start >= len(buf):
        return
    end = min(len(buf), start + len(sig))
    buf[start:end] += sig[: end - start]


def _harmonic_tone(freq, n, sr, partials=(1.0, 0.5, 0.25), detune_cents=0.0):
    t = np.arange(n) / sr
    out = np.zeros(n)
    for k, amp in enumerate(partials, start=1):
        f = freq * k * 2.0 ** (detune_cents / 1200.0)
        out += amp * np.sin(2.0 * np.pi * f * t)
    return out


def _lead_note(midi, n, sr, rng):
    """Two slightly detuned partial-rich sines with vibrato."""
    t = np.arange(n) / sr
    rate = rng.uniform(4.5, 6.5)
    depth = 0.25 * np.clip(t / 0.25, 0.0, 1.0)  # semitones, vibrato fades in
    pitch = midi + depth * np.sin(2.0 * np.pi * rate * t)
    phase = 2.0 * np.pi * np.cumsum(_midi_hz(pitch)) / sr
    out = np.zeros(n)
    for cents in (-6.0, 6.0):
        ph = phase * 2.0 ** (cents / 1200.0)
        out += np.sin(ph) + 0.4 * np.sin(2 * ph) + 0.15 * np.sin(3 * ph)
    return out * _envelope(n, sr, attack=0.03, release=0.06)


def _kick(sr, rng):
    n = int(0.3 * sr)
    t = np.arange(n) / sr
    freq = 45.0 + 75.0 * np.exp(-t / 0.04)
    return np.sin(2.0 * np.pi * np.cumsum(freq) / sr) * np.exp(-t / 0.12)


def _snare(sr, rng):
    n = int(0.2 * sr)
    t = np.arange(n) / sr
    noise = rng.standard_normal(n)
    noise = np.diff(noise, prepend=0.0) * 0.5
    return (0.6 * noise + 0.5 * np.sin(2 * np.pi * 190.0 * t)) * np.exp(-t / 0.06)


def _hat(sr, rng):
    n = int(0.06 * sr)
    t = np.arange(n) / sr
    noise = np.diff(rng.standard_normal(n + 1), n=1)
    return 0.5 * noise * np.exp(-t / 0.015)


def synth_song(rng: np.random.Generator, tonic: int, mode: str, tempo: float,
               seconds: float = SONG_SECONDS, sr: int = SAMPLE_RATE):
    """Render one song; returns ({class: AudioClip}, first_downbeat_s)."""
    n = int(seconds * sr)
    beat = 60.0 / tempo
    lead_in = rng.uniform(0.0, beat)
    scale = MAJOR_SCALE if mode == "major" else MINOR_SCALE
    progs = MAJOR_PROGRESSIONS if mode == "major" else MINOR_PROGRESSIONS
    prog = progs[rng.integers(len(progs))]
    n_beats = int((seconds - lead_in) / beat)

    vocal = np.zeros(n)
    harmonic = np.zeros(n)
    drums = np.zeros(n)
    kick, snare = _kick(sr, rng), _snare(sr, rng)
    bar_len = int(4 * beat * sr)

    for b in range(n_beats):
        t0 = (lead_in + b * beat) * sr
        pos = b % 4
        bar = b // 4
        chord = _chord(scale, prog[bar % len(prog)])
        if pos == 0:
            root = 36 + tonic + chord[0]
            bass = _harmonic_tone(_midi_hz(root), bar_len, sr, (1.0, 0.6, 0.3))
            bass *= _envelope(bar_len, sr, 0.01, 0.1) * np.exp(-np.arange(bar_len) / (1.5 * sr))
            _add(harmonic, t0, 0.22 * bass)
            for iv in chord:
                pad = _harmonic_tone(_midi_hz(60 + tonic + iv), bar_len, sr, (1.0, 0.3), rng.uniform(-4, 4))
                _add(harmonic, t0, 0.07 * pad * _envelope(bar_len, sr, 0.04, 0.15))
            # tonic pedal anchors the key across the progression
            pedal = _harmonic_tone(_midi_hz(48 + tonic), bar_len, sr, (1.0, 0.2))
            _add(harmonic, t0, 0.06 * pedal * _envelope(bar_len, sr, 0.05, 0.15))
        # drums: kick on 1 (strong) and 3, snare on 2 and 4, hat every beat
        if pos == 0:
            _add(drums, t0, 1.0 * kick)
        elif pos == 2:
            _add(drums, t0, 0.55 * kick)
        else:
            _add(drums, t0, 0.7 * snare)
        _add(drums, t0, _hat(sr, rng) * 0.35)

    # melody: phrases of chord tones and passing scale tones on the beat grid
    b = 0
    while b < n_beats:
        if rng.random() < 0.15:
            b += 1
            continue
        length = int(rng.choice([1, 1, 2, 2, 3]))
        length = min(length, n_beats - b)
        chord = _chord(scale, prog[(b // 4) % len(prog)])
        u = rng.random()
        if u < 0.35 or b % 16 >= 12 and length > 1:
            iv = scale[0] if rng.random() < 0.7 else scale[4]  # phrase ends resolve home
        elif u < 0.8:
            iv = chord[rng.integers(3)]
        else:
            iv = scale[rng.integers(7)]
        midi = 67 + tonic % 12 - 7 + iv
        note_n = int(length * beat * sr * 0.92)
        _add(vocal, (lead_in + b * beat) * sr, 0.09 * _lead_note(midi, note_n, sr, rng))
        b += length

    stems = {
        "vocal": AudioClip(vocal, sr),
        "harmonic": AudioClip(harmonic, sr),
        "percussion": AudioClip(0.45 * drums / max(1e-9, np.max(np.abs(drums))), sr),
    }
    return stems, lead_in


def synth_corpus(n_songs: int, seed: int, out_dir, seconds: float = SONG_SECONDS,
                 prefix: str = "song") -> list[SongTruth]:
    """Write stems, ``manifest.tsv`` and ``truth.tsv`` under ``out_dir``."""
    if n_songs < 1:
        raise ValueError("n_songs must be >= 1")
    os.makedirs(os.path.join(out_dir, "stems"), exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_songs)
    truths = []
    manifest_rows = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        song_id = f"{prefix}{i:04d}"
        tonic = int(rng.integers(12))
        mode = "minor" if rng.random() < MINOR_SHARE else "major"
        tempo = float(np.round(rng.uniform(*TEMPO_RANGE), 2))
        stems, lead_in = synth_song(rng, tonic, mode, tempo, seconds)
        for cls, clip in stems.items():
            rel = os.path.join("stems", f"{song_id}_{cls}.wav")
            write_audio(clip, os.path.join(out_dir, rel))
            manifest_rows.append((song_id, cls, rel))
        truths.append(SongTruth(song_id, tonic, mode, tempo, round(lead_in, 6)))

    with open(os.path.join(out_dir, "manifest.tsv"), "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerows(manifest_rows)
    write_truth(truths, os.path.join(out_dir, "truth.tsv"))
    return truths


def write_truth(truths, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["song_id", "tonic", "mode", "tempo_bpm", "first_downbeat_s"])
        for t in truths:
            writer.writerow([t.song_id, t.tonic, t.mode, repr(t.tempo_bpm), repr(t.first_downbeat_s)])


def read_truth(path) -> dict[str, SongTruth]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return {
        r["song_id"]: SongTruth(r["song_id"], int(r["tonic"]), r["mode"],
                                float(r["tempo_bpm"]), float(r["first_downbeat_s"]))
        for r in rows
    }
