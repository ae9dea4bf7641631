"""Analyzed stem store with the key/tempo queries used by mashup generation."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from functools import lru_cache

from .analysis import KeyEstimate, estimate_key, estimate_rhythm, key_distance
from .signal import AudioClip, load_audio, to_engine_rate

log = logging.getLogger(__name__)

STEM_CLASSES = ("vocal", "harmonic", "percussion")
INDEX_VERSION = "mashupdb-index v1"
INDEX_NAME = "mashupdb.tsv"
MAX_KEY_DISTANCE = 3
TEMPO_RATIO_RANGE = (0.8, 1.2)
_RATIO_EPS = 1e-9

_COLUMNS = ["id", "song_id", "class", "audio_path", "tonic", "mode", "key_confidence",
            "tempo_bpm", "duration_s", "downbeat_times"]


@dataclass(frozen=True)
class StemRecord:
    id: str
    song_id: str
    stem_class: str
    audio_path: str
    key: KeyEstimate | None
    tempo_bpm: float
    downbeat_times: tuple
    duration_s: float

    def __post_init__(self):
        if self.stem_class not in STEM_CLASSES:
            raise ValueError(f"unknown stem class {self.stem_class!r}")
        if self.stem_class == "percussion" and self.key is not None:
            raise ValueError("percussion records carry no key")
        if self.stem_class != "percussion" and self.key is None:
            raise ValueError(f"{self.stem_class} record {self.id} needs a key")
        if self.duration_s <= 0 or self.tempo_bpm <= 0:
            raise ValueError(f"record {self.id}: duration and tempo must be positive")
        if any(t < 0 or t > self.duration_s for t in self.downbeat_times):
            raise ValueError(f"record {self.id}: downbeat outside the clip")


def tempo_ratio_ok(seed_tempo: float, tempo: float) -> bool:
    lo, hi = TEMPO_RATIO_RANGE
    return lo - _RATIO_EPS <= seed_tempo / tempo <= hi + _RATIO_EPS


class MashupDB:
    """Immutable collection of StemRecords indexed by class and song."""

    def __init__(self, records, root):
        self.root = os.path.abspath(root)
        self.records = tuple(sorted(records, key=lambda r: r.id))
        self._by_id = {}
        self._by_song = {}
        self._by_class = {c: [] for c in STEM_CLASSES}
        for r in self.records:
            if r.id in self._by_id:
                raise ValueError(f"duplicate record id {r.id}")
            song = self._by_song.setdefault(r.song_id, {})
            if r.stem_class in song:
                raise ValueError(f"duplicate ({r.song_id}, {r.stem_class}) in database")
            song[r.stem_class] = r
            self._by_id[r.id] = r
            self._by_class[r.stem_class].append(r)
        self._load = lru_cache(maxsize=64)(self._load_uncached)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, record_id: str) -> StemRecord:
        return self._by_id[record_id]

    def of_class(self, stem_class: str) -> list[StemRecord]:
        return list(self._by_class[stem_class])

    @property
    def song_ids(self) -> list[str]:
        return sorted(self._by_song)

    def siblings(self, song_id: str) -> dict[str, StemRecord]:
        if song_id not in self._by_song:
            raise KeyError(f"unknown song_id {song_id!r}")
        return dict(self._by_song[song_id])

    def path_of(self, record: StemRecord) -> str:
        return os.path.join(self.root, record.audio_path)

    def load_clip(self, record: StemRecord) -> AudioClip:
        """Engine-rate audio for ``record`` (small LRU cache)."""
        return self._load(record.id)

    def _load_uncached(self, record_id):
        return to_engine_rate(load_audio(self.path_of(self[record_id])))

    def query_harmonic(self, seed_key: KeyEstimate, seed_tempo: float, *, use_key=True,
                       use_tempo=True, exclude_song=None) -> list[StemRecord]:
        """Harmonic stems within 3 semitones of ``seed_key`` and tempo ratio [0.8, 1.2]."""
        out = []
        for r in self._by_class["harmonic"]:
            if r.song_id == exclude_song:
                continue
            if use_key and key_distance(r.key, seed_key) > MAX_KEY_DISTANCE:
                continue
            if use_tempo and not tempo_ratio_ok(seed_tempo, r.tempo_bpm):
                continue
            out.append(r)
        return out

    def query_percussion(self, seed_tempo: float, *, use_tempo=True,
                         exclude_song=None) -> list[StemRecord]:
        return [r for r in self._by_class["percussion"]
                if r.song_id != exclude_song
                and (not use_tempo or tempo_ratio_ok(seed_tempo, r.tempo_bpm))]

    # -- persistence --------------------------------------------------------

    def save(self, index_path):
        index_dir = os.path.dirname(os.path.abspath(index_path))
        root = os.path.relpath(self.root, index_dir)
        with open(index_path, "w", newline="") as fh:
            fh.write(f"# {INDEX_VERSION}\troot={root}\n")
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            writer.writerow(_COLUMNS)
            for r in self.records:
                key = r.key
                writer.writerow([
                    r.id, r.song_id, r.stem_class, r.audio_path,
                    "" if key is None else key.tonic,
                    "" if key is None else key.mode,
                    "" if key is None else repr(key.confidence),
                    repr(r.tempo_bpm), repr(r.duration_s),
                    ",".join(repr(t) for t in r.downbeat_times),
                ])

    @classmethod
    def load(cls, index_path) -> "MashupDB":
        if os.path.isdir(index_path):
            index_path = os.path.join(index_path, INDEX_NAME)
        with open(index_path, newline="") as fh:
            header = fh.readline().rstrip("\n")
            if not header.startswith(f"# {INDEX_VERSION}\troot="):
                raise ValueError(f"{index_path}: not a {INDEX_VERSION} file")
            root = header.split("root=", 1)[1]
            rows = list(csv.DictReader(fh, delimiter="\t"))
        root = os.path.join(os.path.dirname(os.path.abspath(index_path)), root)
        records = []
        for row in rows:
            key = None
            if row["tonic"] != "":
                key = KeyEstimate(int(row["tonic"]), row["mode"], float(row["key_confidence"]))
            downbeats = tuple(float(t) for t in row["downbeat_times"].split(",") if t)
            records.append(StemRecord(row["id"], row["song_id"], row["class"], row["audio_path"],
                                      key, float(row["tempo_bpm"]), downbeats,
                                      float(row["duration_s"])))
        return cls(records, root)


def read_manifest(path) -> list[tuple[str, str, str]]:
    """Parse ``song_id<TAB>class<TAB>path`` lines; blank and '#' lines are skipped."""
    entries = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise ValueError(f"{path}:{lineno}: expected song_id, class, path separated by tabs")
            song_id, stem_class, rel = parts
            if stem_class not in STEM_CLASSES:
                raise ValueError(f"{path}:{lineno}: unknown stem class {stem_class!r}")
            if (song_id, stem_class) in seen:
                raise ValueError(f"{path}:{lineno}: duplicate stem ({song_id}, {stem_class})")
            seen.add((song_id, stem_class))
            entries.append((song_id, stem_class, rel))
    return entries


def build_db(stem_root, manifest, index_path=None) -> MashupDB:
    """Analyze every stem listed in ``manifest`` and write the index.

    Vocal and harmonic stems take their tempo and downbeats from the song's
    percussion stem when one exists.  Stems whose analysis fails are skipped
    with a warning.
    """
    entries = read_manifest(manifest)
    for _, _, rel in entries:
        full = os.path.join(stem_root, rel)
        if not os.path.exists(full):
            raise FileNotFoundError(full)

    by_song = {}
    for song_id, stem_class, rel in entries:
        by_song.setdefault(song_id, {})[stem_class] = rel

    records = []
    for song_id in sorted(by_song):
        stems = by_song[song_id]
        clips = {c: to_engine_rate(load_audio(os.path.join(stem_root, rel))) for c, rel in stems.items()}
        song_rhythm = None
        if "percussion" in clips:
            try:
                song_rhythm = estimate_rhythm(clips["percussion"])
            except ValueError as exc:
                log.warning("rhythm analysis failed for %s percussion: %s", song_id, exc)
        for stem_class in STEM_CLASSES:
            if stem_class not in clips:
                continue
            clip = clips[stem_class]
            try:
                rhythm = song_rhythm or estimate_rhythm(clip)
                key = None if stem_class == "percussion" else estimate_key(clip)
            except ValueError as exc:
                log.warning("skipping %s/%s: %s", song_id, stem_class, exc)
                continue
            downbeats = tuple(float(t) for t in rhythm.downbeat_times if t <= clip.duration)
            records.append(StemRecord(f"{song_id}:{stem_class}", song_id, stem_class, stems[stem_class],
                                      key, float(rhythm.tempo_bpm), downbeats, clip.duration))

    db = MashupDB(records, stem_root)
    if index_path is not None:
        db.save(index_path)
    return db
