import numpy as np
import pytest

from mashnet.mashupdb import build_db
from mashnet.signal import SAMPLE_RATE, AudioClip
from mashnet.synth import synth_corpus


def tone(freq, seconds=2.0, sr=SAMPLE_RATE, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), sr)


def click_track(bpm, seconds=10.0, sr=SAMPLE_RATE, accent_every=None, start=0.0):
    """Short decaying noise bursts on a beat grid; optional low kick on accented beats."""
    rng = np.random.default_rng(0)
    x = np.zeros(int(seconds * sr))
    period = 60.0 / bpm
    n = int(0.03 * sr)
    click = rng.standard_normal(n) * np.exp(-np.arange(n) / (0.005 * sr))
    kn = int(0.15 * sr)
    kt = np.arange(kn) / sr
    kick = np.sin(2 * np.pi * 60 * kt) * np.exp(-kt / 0.05)
    k = 0
    while start + k * period < seconds - 0.2:
        i = int((start + k * period) * sr)
        x[i:i + n] += 0.3 * click
        if accent_every and k % accent_every == 0:
            x[i:i + kn] += kick
        k += 1
    return AudioClip(x, sr)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    truths = synth_corpus(12, 3, root, seconds=16.0)
    return root, truths


@pytest.fixture(scope="session")
def db(corpus):
    root, _ = corpus
    return build_db(root, root / "manifest.tsv", root / "mashupdb.tsv")
