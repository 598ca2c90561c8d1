import numpy as np
import pytest

from muxmark.audio import AudioBuffer, synth_speech_like


@pytest.fixture(scope="session")
def host3s():
    """One reference 3 s speech-shaped host."""
    return synth_speech_like(3.0, seed=1001)


@pytest.fixture(scope="session")
def hosts():
    """A small fixed host set for monotonicity/oracle checks."""
    return [synth_speech_like(3.0, seed=2000 + i) for i in range(4)]


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Desk-scale synthetic corpus on disk (50 x 3 s, 16 kHz)."""
    from muxmark.bench import make_synthetic_corpus

    d = tmp_path_factory.mktemp("corpus")
    make_synthetic_corpus(d, count=50, duration=3.0, seed=31337)
    return d


def rel_l2(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30))


def snr_of(ref: AudioBuffer, test: AudioBuffer) -> float:
    err = np.sum((ref.samples - test.samples) ** 2)
    return 10 * np.log10(np.sum(ref.samples**2) / max(err, 1e-30))
