"""Waveform I/O and an invertible STFT/ISTFT pair.

Everything downstream (embedding, routing, attacks) is built on the two
transforms in this module, so they are kept strict: mono float64 buffers,
Hann analysis/synthesis windows at 50% overlap, and weighted overlap-add
normalisation that reconstructs the input to float64 precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16000

PCM16_SCALE = 32768.0


class AudioError(ValueError):
    """Raised on malformed audio input or unsupported WAV encodings."""


def _as_mono_float(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 1:
        raise AudioError(f"expected mono 1-D samples, got shape {arr.shape}")
    if arr.size == 0:
        raise AudioError("empty audio buffer")
    if not np.all(np.isfinite(arr)):
        raise AudioError("audio buffer contains non-finite samples")
    return arr


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform with its sample rate. Samples are float64 in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_mono_float(self.samples))
        if self.sample_rate <= 0:
            raise AudioError(f"bad sample rate {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))

    def replace_samples(self, samples: np.ndarray) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters: power-of-two frame, 50% hop, Hann window."""

    frame_len: int = 1024
    hop: int = 512
    window: str = "hann"

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len & (self.frame_len - 1):
            raise AudioError(f"frame_len must be a power of two, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise AudioError(f"hop {self.hop} out of range for frame {self.frame_len}")
        if self.hop != self.frame_len // 2:
            raise AudioError("hop must equal frame_len/2 (50% overlap-add)")
        if self.window != "hann":
            raise AudioError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def window_values(self) -> np.ndarray:
        # periodic Hann: COLA-compliant at 50% overlap
        n = np.arange(self.frame_len)
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / self.frame_len))

    def bin_hz(self, sample_rate: int) -> np.ndarray:
        return np.arange(self.n_bins) * (sample_rate / self.frame_len)


DEFAULT_STFT = StftConfig()


@dataclass(frozen=True)
class Spectrogram:
    """One-sided complex T-F grid, [n_frames x n_bins], plus framing metadata."""

    grid: np.ndarray
    config: StftConfig
    sample_rate: int
    orig_len: int

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.complex128)
        if grid.ndim != 2 or grid.shape[1] != self.config.n_bins:
            raise AudioError(
                f"grid shape {grid.shape} inconsistent with n_bins {self.config.n_bins}"
            )
        if not np.all(np.isfinite(grid)):
            raise AudioError("spectrogram contains non-finite entries")
        object.__setattr__(self, "grid", grid)

    @property
    def n_frames(self) -> int:
        return self.grid.shape[0]

    @property
    def n_bins(self) -> int:
        return self.grid.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.grid)

    def replace_grid(self, grid: np.ndarray) -> "Spectrogram":
        return Spectrogram(grid, self.config, self.sample_rate, self.orig_len)


def _frame_layout(n_samples: int, cfg: StftConfig) -> tuple[int, int]:
    """Return (n_frames, padded_len) for a signal of n_samples.

    The signal is offset by one hop of leading zeros and padded at the tail so
    every original sample is covered by two overlapping frames; this keeps the
    overlap-add weight bounded away from zero over the whole signal.
    """
    min_len = n_samples + 2 * cfg.hop
    n_frames = max(1, math.ceil((min_len - cfg.frame_len) / cfg.hop)) + 1
    padded_len = (n_frames - 1) * cfg.hop + cfg.frame_len
    return n_frames, padded_len


def _stft_array(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames, padded_len = _frame_layout(x.size, cfg)
    padded = np.zeros(padded_len)
    padded[cfg.hop : cfg.hop + x.size] = x
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * cfg.window_values()[None, :]
    return np.fft.rfft(frames, axis=1)


def _istft_array(grid: np.ndarray, cfg: StftConfig, orig_len: int) -> np.ndarray:
    n_frames = grid.shape[0]
    padded_len = (n_frames - 1) * cfg.hop + cfg.frame_len
    win = cfg.window_values()
    frames = np.fft.irfft(grid, n=cfg.frame_len, axis=1) * win[None, :]

    acc = np.zeros(padded_len)
    wsum = np.zeros(padded_len)
    w2 = win**2
    for t in range(n_frames):
        start = t * cfg.hop
        acc[start : start + cfg.frame_len] += frames[t]
        wsum[start : start + cfg.frame_len] += w2
    np.maximum(wsum, 1e-12, out=wsum)
    out = acc / wsum
    return out[cfg.hop : cfg.hop + orig_len]


def stft(buf: AudioBuffer, cfg: StftConfig = DEFAULT_STFT) -> Spectrogram:
    """Short-time Fourier transform with Hann analysis windowing."""
    if len(buf) < cfg.frame_len:
        raise AudioError(
            f"buffer of {len(buf)} samples shorter than one frame ({cfg.frame_len})"
        )
    grid = _stft_array(buf.samples, cfg)
    return Spectrogram(grid, cfg, buf.sample_rate, len(buf))


def istft(spec: Spectrogram) -> AudioBuffer:
    """Inverse STFT via Hann-weighted overlap-add; truncates to orig_len."""
    expected_frames, _ = _frame_layout(spec.orig_len, spec.config)
    if spec.n_frames != expected_frames:
        raise AudioError(
            f"grid has {spec.n_frames} frames, expected {expected_frames} "
            f"for orig_len {spec.orig_len}"
        )
    out = _istft_array(spec.grid, spec.config, spec.orig_len)
    return AudioBuffer(out, spec.sample_rate)


def clip_samples(samples: np.ndarray) -> tuple[np.ndarray, int]:
    """Clip to [-1, 1]; returns (clipped, number of clipped samples)."""
    over = np.abs(samples) > 1.0
    n_clipped = int(np.count_nonzero(over))
    if n_clipped:
        samples = np.clip(samples, -1.0, 1.0)
    return samples, n_clipped


def load_wav(path) -> AudioBuffer:
    """Read a mono PCM16 or IEEE float32 WAV file.

    PCM16 samples are normalised by 32768; float32 data is taken as-is.
    Multichannel input is rejected rather than silently downmixed.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises plain ValueError on bad RIFF
        raise AudioError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(
            f"{path}: unsupported WAV encoding {data.dtype}; use pcm16 or float32"
        )
    return AudioBuffer(samples, int(rate))


def save_wav(buf: AudioBuffer, path, encoding: str = "float32") -> None:
    """Write a mono WAV file; samples are clipped to [-1, 1] first."""
    clipped, _ = clip_samples(buf.samples.copy())
    if encoding == "pcm16":
        q = np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype(np.int16)
        wavfile.write(path, buf.sample_rate, q)
    elif encoding == "float32":
        wavfile.write(path, buf.sample_rate, clipped.astype(np.float32))
    else:
        raise AudioError(f"unsupported encoding {encoding!r}")


def synth_speech_like(
    duration: float,
    seed: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    rms: float = 0.1,
) -> AudioBuffer:
    """Deterministic speech-shaped noise: band-limited, tilted, AM-modulated.

    Used as the synthetic evaluation corpus; the long-term spectrum roughly
    follows speech (energy concentrated 150 Hz - 4 kHz with a high-frequency
    roll-off) and a 4 Hz envelope gives it syllable-like temporal structure.
    """
    from scipy import signal as sps

    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(np.random.PCG64(seed))
    x = rng.standard_normal(n)
    sos_bp = sps.butter(2, [150, 6800], btype="bandpass", fs=sample_rate, output="sos")
    x = sps.sosfilt(sos_bp, x)
    sos_tilt = sps.butter(1, 900, btype="lowpass", fs=sample_rate, output="sos")
    x = 0.35 * x + sps.sosfilt(sos_tilt, x)
    t = np.arange(n) / sample_rate
    env = 1.0 + 0.3 * np.cos(2 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))
    x *= env
    fade = min(n // 2, int(0.05 * sample_rate))
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        x[:fade] *= ramp
        x[-fade:] *= ramp[::-1]
    x *= rms / max(np.sqrt(np.mean(x**2)), 1e-12)
    return AudioBuffer(x, sample_rate)
