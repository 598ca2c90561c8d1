"""Self-contained signal plumbing for the reference codec engines.

Everything here is deterministic given its seeds; the adapters promise
byte-identical output across runs for fixed settings.
"""

from __future__ import annotations

import numpy as np

FRAME = 1024
HOP = 512


def hann(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def stft(x: np.ndarray, frame: int = FRAME, hop: int = HOP) -> np.ndarray:
    pad = np.concatenate([np.zeros(hop), x, np.zeros(frame)])
    n_frames = 1 + (pad.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(pad[idx] * hann(frame)[None, :], axis=1)


def istft(grid: np.ndarray, orig_len: int, frame: int = FRAME, hop: int = HOP) -> np.ndarray:
    win = hann(frame)
    frames = np.fft.irfft(grid, n=frame, axis=1) * win[None, :]
    out_len = (grid.shape[0] - 1) * hop + frame
    acc = np.zeros(out_len)
    wsum = np.zeros(out_len)
    for t in range(grid.shape[0]):
        acc[t * hop : t * hop + frame] += frames[t]
        wsum[t * hop : t * hop + frame] += win**2
    acc /= np.maximum(wsum, 1e-12)
    out = acc[hop : hop + orig_len]
    if out.size < orig_len:
        out = np.concatenate([out, np.zeros(orig_len - out.size)])
    return out


def mel_filterbank(n_mels: int, n_bins: int, sample_rate: int) -> np.ndarray:
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    freqs = np.arange(n_bins) * sample_rate / ((n_bins - 1) * 2)
    edges = from_mel(np.linspace(to_mel(0.0), to_mel(sample_rate / 2), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def griffin_lim(mags: np.ndarray, orig_len: int, iters: int, seed: int) -> np.ndarray:
    """Phase reconstruction from magnitudes, seeded and deterministic."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    phase = np.exp(2j * np.pi * rng.uniform(size=mags.shape))
    x = istft(mags * phase, orig_len)
    for _ in range(iters):
        spec = stft(x)
        spec = spec[: mags.shape[0]]
        if spec.shape[0] < mags.shape[0]:
            spec = np.pad(spec, ((0, mags.shape[0] - spec.shape[0]), (0, 0)))
        mag_now = np.abs(spec)
        phase = spec / np.maximum(mag_now, 1e-12)
        x = istft(mags * phase, orig_len)
    return x
