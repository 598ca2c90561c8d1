import numpy as np
import pytest
from scipy import signal as sps
from scipy.io import wavfile


def speechish(n: int, seed: int, rms: float = 0.1) -> np.ndarray:
    """Deterministic speech-shaped noise for adapter tests (no muxmark dep)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    sos = sps.butter(2, [150, 6800], btype="bandpass", fs=16000, output="sos")
    x = sps.sosfilt(sos, x)
    x *= rms / np.std(x)
    return x


@pytest.fixture(scope="session")
def in_wav(tmp_path_factory):
    d = tmp_path_factory.mktemp("wavs")
    path = d / "in.wav"
    wavfile.write(path, 16000, speechish(48000, seed=11).astype(np.float32))
    return path
