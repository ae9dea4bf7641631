from collections import Counter

import numpy as np
import pytest

from mashnet.analysis import onset_envelope
from mashnet.generation import (DESK_WINDOW, Condition, DatasetExample, GenerationError, MashupCandidate,
                                audit_candidate, build_dataset, candidate_from_seed, generate_candidate,
                                read_manifest, render, render_dataset, render_stems, split_indices,
                                write_manifest)
from mashnet.signal import load_audio
from mashnet.transform import IDENTITY, TransformSpec


def test_condition_flags_and_labels():
    assert Condition.MATCHED.key_control and Condition.MATCHED.tempo_control
    assert not Condition.UNMATCHED_KEY.key_control and Condition.UNMATCHED_KEY.tempo_control
    assert Condition.UNMATCHED_TEMPO.key_control and not Condition.UNMATCHED_TEMPO.tempo_control
    assert [c.label for c in Condition] == ["positive", "unlabeled", "negative", "negative", "negative"]


def test_matched_candidates_meet_constraints(db):
    rng = np.random.default_rng(1)
    for _ in range(60):
        cand = generate_candidate(db, "matched", rng, window=DESK_WINDOW)
        a = audit_candidate(db, cand)
        assert a["pre_key_distance"] <= 3
        assert 0.8 - 1e-9 <= a["pre_harmonic_ratio"] <= 1.2 + 1e-9
        assert 0.8 - 1e-9 <= a["pre_percussion_ratio"] <= 1.2 + 1e-9
        assert a["post_key_distance"] == 0
        assert a["post_harmonic_ratio"] == pytest.approx(1.0)
        assert a["post_percussion_ratio"] == pytest.approx(1.0)
        assert db[cand.harmonic_id].song_id != db[cand.vocal_id].song_id


def test_original_uses_siblings_untouched(db):
    cand = generate_candidate(db, Condition.ORIGINAL, np.random.default_rng(2), window=DESK_WINDOW)
    songs = {db[i].song_id for i in cand.stem_ids}
    assert len(songs) == 1
    assert cand.harmonic_spec == IDENTITY and cand.percussion_spec == IDENTITY


def test_unmatched_strategies_disable_controls(db):
    rng = np.random.default_rng(3)
    for _ in range(20):
        uk = generate_candidate(db, "unmatched_key", rng, window=DESK_WINDOW)
        assert uk.harmonic_spec.pitch_semitones == 0
        ut = generate_candidate(db, "unmatched_tempo", rng, window=DESK_WINDOW)
        assert ut.harmonic_spec.stretch_ratio == 1.0 and ut.percussion_spec.stretch_ratio == 1.0
        offsets = [ut.harmonic_spec.downbeat_offset_s, ut.percussion_spec.downbeat_offset_s]
        assert sum(o != 0 for o in offsets) == 1 and all(abs(o) <= 1.0 for o in offsets)
        ukt = generate_candidate(db, "unmatched_key_tempo", rng, window=DESK_WINDOW)
        assert ukt.harmonic_spec.pitch_semitones == 0 and ukt.harmonic_spec.stretch_ratio == 1.0


def test_candidates_reproducible_from_seed(db):
    cand = generate_candidate(db, "matched", np.random.default_rng(4), window=DESK_WINDOW)
    assert candidate_from_seed(db, "matched", cand.rng_seed, window=DESK_WINDOW) == cand


def test_pinned_unknown_seed(db):
    with pytest.raises(GenerationError):
        candidate_from_seed(db, "matched", 0, vocal_seed="nope:vocal")


def test_dataset_counts_and_split(db):
    examples = build_dataset(db, 9, np.random.default_rng(5), window=DESK_WINDOW)
    labels = Counter(e.label for e in examples)
    assert labels == {"positive": 9, "negative": 9, "unlabeled": 9}
    negs = Counter(e.candidate.condition for e in examples if e.label == "negative")
    assert negs == {Condition.UNMATCHED_KEY: 3, Condition.UNMATCHED_TEMPO: 3, Condition.UNMATCHED_KEY_TEMPO: 3}
    train, val = split_indices([e.label for e in examples], seed=0)
    assert len(train) + len(val) == 27 and not set(train) & set(val)
    for lab in ("positive", "negative", "unlabeled"):
        assert sum(examples[i].label == lab for i in val) == 2  # round(9 / 5)


def test_negative_remainder_goes_to_joint_strategy(db):
    examples = build_dataset(db, 10, np.random.default_rng(6), window=DESK_WINDOW)
    negs = Counter(e.candidate.condition for e in examples if e.label == "negative")
    assert negs[Condition.UNMATCHED_KEY_TEMPO] == 4


def test_dataset_deterministic(db):
    a = build_dataset(db, 6, np.random.default_rng(7), window=DESK_WINDOW)
    b = build_dataset(db, 6, np.random.default_rng(7), window=DESK_WINDOW)
    assert a == b


def test_manifest_roundtrip(db, tmp_path):
    examples = build_dataset(db, 3, np.random.default_rng(8), window=DESK_WINDOW)
    write_manifest(examples, tmp_path / "d.tsv")
    assert read_manifest(tmp_path / "d.tsv") == examples


def test_example_label_must_match_condition(db):
    cand = generate_candidate(db, "matched", np.random.default_rng(9), window=DESK_WINDOW)
    with pytest.raises(ValueError):
        DatasetExample(cand, "positive")


def test_render_within_window_and_aligned(db):
    rng = np.random.default_rng(10)
    for cond in Condition:
        cand = generate_candidate(db, cond, rng, window=DESK_WINDOW)
        stems = render_stems(db, cand)
        lengths = {len(s.samples) for s in stems}
        assert len(lengths) == 1
        assert stems[0].duration <= cand.duration_s + 1.0 / stems[0].sample_rate
        mixed = render(db, cand)
        assert np.max(np.abs(mixed.samples)) <= 1.0


def test_render_dataset_writes_audio(db, tmp_path):
    examples = build_dataset(db, 1, np.random.default_rng(11), window=DESK_WINDOW)
    out = render_dataset(db, examples, tmp_path)
    for ex in out:
        clip = load_audio(tmp_path / ex.audio_path)
        assert clip.duration >= 1.0


def _first_onset(clip):
    env, fps = onset_envelope(clip)
    return np.argmax(env > 0.5 * env.max()) / fps


def test_offset_stem_lags_by_offset(db):
    base = generate_candidate(db, "unmatched_tempo", np.random.default_rng(12), window=DESK_WINDOW)
    plain = MashupCandidate(base.vocal_id, base.harmonic_id, base.percussion_id, Condition.UNMATCHED_TEMPO,
                            IDENTITY, IDENTITY, base.rng_seed, base.duration_s, 0.0)
    shifted = MashupCandidate(base.vocal_id, base.harmonic_id, base.percussion_id, Condition.UNMATCHED_TEMPO,
                              IDENTITY, TransformSpec(downbeat_offset_s=1.0), base.rng_seed, base.duration_s, 0.0)
    lag = _first_onset(render_stems(db, shifted)[2]) - _first_onset(render_stems(db, plain)[2])
    assert abs(lag - 1.0) <= 0.05


def test_prefix_render_matches_full_render(db):
    from mashnet.signal import AudioClip, mel_spectrogram
    cand = generate_candidate(db, "matched", np.random.default_rng(13), window=DESK_WINDOW)
    full = render_stems(db, cand)
    part = render_stems(db, cand, max_seconds=3.0)
    for a, b in zip(full, part):
        ma = mel_spectrogram(AudioClip(a.samples[:len(b.samples)], a.sample_rate)).values
        mb = mel_spectrogram(b).values
        assert np.corrcoef(ma.ravel(), mb.ravel())[0, 1] > 0.95


def _toy_db():
    from mashnet.analysis import KeyEstimate
    from mashnet.mashupdb import MashupDB, StemRecord

    def rec(song, cls, key, tempo):
        k = None if key is None else KeyEstimate(key, "major", 1.0)
        return StemRecord(f"{song}:{cls}", song, cls, f"{song}/{cls}.wav", k, tempo, (0.5,), 30.0)
    return MashupDB([rec("a", "vocal", 0, 120.0), rec("b", "harmonic", 2, 115.0), rec("c", "percussion", None, 110.0),
                     rec("d", "harmonic", 5, 120.0)], "/nonexistent")


def test_matched_transform_arithmetic_by_hand():
    # seed C @ 120; only D @ 115 is within key range; percussion @ 110
    cand = candidate_from_seed(_toy_db(), "matched", 3, vocal_seed="a:vocal", window=DESK_WINDOW)
    assert cand.harmonic_id == "b:harmonic"
    assert cand.harmonic_spec.pitch_semitones == -2
    assert cand.harmonic_spec.stretch_ratio == pytest.approx(120 / 115)
    assert cand.percussion_spec.stretch_ratio == pytest.approx(120 / 110)


def test_pinned_seed_without_candidates_errors():
    from mashnet.mashupdb import MashupDB
    db = _toy_db()
    only_far = MashupDB([r for r in db.records if r.id != "b:harmonic"], db.root)
    with pytest.raises(GenerationError):
        candidate_from_seed(only_far, "matched", 0, vocal_seed="a:vocal", window=DESK_WINDOW)


def test_distinct_draws_for_same_seed(db):
    vocal = db.of_class("vocal")[0].id
    cands = {candidate_from_seed(db, "matched", s, vocal, DESK_WINDOW) for s in range(10)}
    triples = {(c.harmonic_id, c.percussion_id, c.duration_s) for c in cands}
    assert len(triples) == 10


def test_matched_render_follows_seed_tempo_and_key(db):
    from mashnet.analysis import estimate_key, estimate_rhythm
    from mashnet.signal import mix
    rng = np.random.default_rng(14)
    tempo_ok = key_ok = 0
    trials = 6
    for _ in range(trials):
        cand = generate_candidate(db, "matched", rng, window=DESK_WINDOW)
        seed = db[cand.vocal_id]
        stems = render_stems(db, cand)
        tempo = estimate_rhythm(mix(stems)).tempo_bpm
        tempo_ok += abs(tempo / seed.tempo_bpm - 1.0) <= 0.02
        key_ok += estimate_key(mix(stems[:2])).tonic == seed.key.tonic
    assert tempo_ok == trials
    assert key_ok >= trials - 1
