"""muxmark: training-free multiplexing of audio watermarks plus a
robustness benchmark over a standard dilution-attack battery."""

from .audio import (
    AudioBuffer,
    AudioError,
    DEFAULT_SAMPLE_RATE,
    DEFAULT_STFT,
    Spectrogram,
    StftConfig,
    istft,
    load_wav,
    save_wav,
    stft,
    synth_speech_like,
)
from .backends import (
    DetectionScore,
    Payload,
    Perturbation,
    WatermarkKey,
    detect,
    embed,
    phase_detect,
    phase_embed,
    qim_detect,
    qim_embed,
    ss_detect,
    ss_embed,
)

__version__ = "0.1.0"
