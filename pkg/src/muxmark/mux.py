"""Multiplexing engine: parallel addition, T-F routing, sequential cascade.

Parallel embedding adds scaled perturbations in the time domain. The routed
variants move the same perturbations through the STFT, apply per-watermark
routing masks (all-pass, frequency-division, or time-division), and
resynthesize. Because the transforms are linear and reconstruct perfectly,
an all-ones mask reproduces plain parallel addition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backends
from .audio import (
    DEFAULT_STFT,
    AudioBuffer,
    StftConfig,
    _istft_array,
    clip_samples,
    stft,
)

ALPHA_MAX = 4.0

MASK_LABELS = ("naive", "fdm", "tdm", "patfm")


@dataclass(frozen=True)
class RoutingMask:
    """Non-negative T-F gain grid selecting where a perturbation applies."""

    grid: np.ndarray
    label: str = "naive"

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2:
            raise ValueError("routing mask must be 2-D [n_frames x n_bins]")
        if not np.all(np.isfinite(grid)):
            raise ValueError("routing mask has non-finite entries")
        if np.any(grid < 0):
            raise ValueError("routing mask entries must be >= 0")
        if np.any(grid > ALPHA_MAX):
            raise ValueError(f"routing mask entries exceed alpha_max={ALPHA_MAX}")
        if self.label not in MASK_LABELS:
            raise ValueError(f"unknown mask label {self.label!r}")
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> tuple:
        return self.grid.shape


@dataclass(frozen=True)
class BandPlan:
    """Frequency bands [f_lo, f_hi) per watermark, disjoint by default."""

    bands: tuple

    def __post_init__(self):
        bands = tuple((float(lo), float(hi)) for lo, hi in self.bands)
        if not bands:
            raise ValueError("band plan is empty")
        for lo, hi in bands:
            if not 0 <= lo < hi:
                raise ValueError(f"bad band [{lo}, {hi})")
        object.__setattr__(self, "bands", bands)

    def __len__(self) -> int:
        return len(self.bands)

    @classmethod
    def default(cls, n_wm: int, sample_rate: int = 16000) -> "BandPlan":
        nyq = sample_rate / 2
        if n_wm == 1:
            return cls(((0.0, nyq),))
        if n_wm == 2:
            return cls(((0.0, nyq / 2), (nyq / 2, nyq)))
        if n_wm == 3:
            return cls(((0.0, 2000.0), (2000.0, 5000.0), (5000.0, nyq)))
        raise ValueError(f"no default band plan for {n_wm} watermarks")


@dataclass(frozen=True)
class SlotPlan:
    """Round-robin time-slot assignment; slot length within 40-80 ms."""

    slot_len_ms: float = 60.0
    n_wm: int = 2

    def __post_init__(self):
        if not 40.0 <= self.slot_len_ms <= 80.0:
            raise ValueError("slot_len_ms must lie in [40, 80]")
        if self.n_wm < 1:
            raise ValueError("need at least one watermark")

    def frames_per_slot(self, cfg: StftConfig, sample_rate: int) -> int:
        return max(1, math.ceil(self.slot_len_ms * sample_rate / 1000.0 / cfg.hop))

    def frame_owner(self, n_frames: int, cfg: StftConfig, sample_rate: int) -> np.ndarray:
        fps = self.frames_per_slot(cfg, sample_rate)
        return (np.arange(n_frames) // fps) % self.n_wm


def _check_aligned(x: AudioBuffer, perturbations, alphas) -> None:
    if len(perturbations) != len(alphas):
        raise ValueError(
            f"{len(perturbations)} perturbations vs {len(alphas)} strengths"
        )
    for p in perturbations:
        if len(p) != len(x):
            raise ValueError(f"perturbation length {len(p)} != host length {len(x)}")


def mux_parallel_raw(
    x: AudioBuffer, perturbations, alphas
) -> tuple[AudioBuffer, int]:
    """Parallel superposition; returns (audio, clipped-sample count)."""
    _check_aligned(x, perturbations, alphas)
    out = x.samples.copy()
    for p, a in zip(perturbations, alphas):
        out += a * p.delta
    out, n_clipped = clip_samples(out)
    return x.replace_samples(out), n_clipped


def mux_parallel(x: AudioBuffer, perturbations, alphas) -> AudioBuffer:
    """x + sum_i alphas[i] * delta_i, clipped to [-1, 1]."""
    return mux_parallel_raw(x, perturbations, alphas)[0]


def mux_sequential(x: AudioBuffer, order) -> AudioBuffer:
    """Cascade embeddings; each stage embeds on the previous stage's output.

    ``order`` is a list of (backend_id, payload, key, strength) tuples; pass
    ``None`` as strength to use the backend default.
    """
    if not order:
        raise ValueError("sequential order is empty")
    current = x
    for backend_id, payload, key, strength in order:
        delta = backends.embed(backend_id, current, payload, key, strength)
        samples, _ = clip_samples(current.samples + delta.delta)
        current = current.replace_samples(samples)
    return current


def _bin_freqs(dims, cfg: StftConfig, sample_rate: int) -> np.ndarray:
    n_frames, n_bins = dims
    if n_bins != cfg.n_bins:
        raise ValueError(f"dims {dims} inconsistent with config bins {cfg.n_bins}")
    return cfg.bin_hz(sample_rate)


def band_bin_mask(
    band: tuple, cfg: StftConfig, sample_rate: int
) -> np.ndarray:
    """Boolean bin membership; half-open [lo, hi), except that a band ending
    exactly at Nyquist also owns the Nyquist bin (otherwise it is uncoverable)."""
    lo, hi = band
    nyq = sample_rate / 2
    if hi > nyq:
        raise ValueError(f"band [{lo}, {hi}) exceeds Nyquist {nyq}")
    freqs = cfg.bin_hz(sample_rate)
    mask = (freqs >= lo) & (freqs < hi)
    if hi == nyq:
        mask |= freqs == nyq
    return mask


def make_fdm_masks(
    plan: BandPlan,
    alphas,
    dims,
    cfg: StftConfig = DEFAULT_STFT,
    sample_rate: int = 16000,
    require_disjoint: bool = True,
) -> list:
    """Frequency-division masks: alphas[i] inside band i, zero elsewhere."""
    if len(plan) != len(alphas):
        raise ValueError("one strength per band required")
    _bin_freqs(dims, cfg, sample_rate)
    n_frames, n_bins = dims
    bin_masks = [band_bin_mask(b, cfg, sample_rate) for b in plan.bands]
    if require_disjoint:
        cover = np.zeros(n_bins, dtype=int)
        for m in bin_masks:
            cover += m
        if np.any(cover > 1):
            raise ValueError("band plan has overlapping bands")
    masks = []
    for bm, a in zip(bin_masks, alphas):
        grid = np.zeros((n_frames, n_bins))
        grid[:, bm] = a
        masks.append(RoutingMask(grid, "fdm"))
    return masks


def make_tdm_masks(
    plan: SlotPlan,
    alphas,
    dims,
    cfg: StftConfig = DEFAULT_STFT,
    sample_rate: int = 16000,
) -> list:
    """Time-division masks: alphas[i] on frames owned by watermark i."""
    if plan.n_wm != len(alphas):
        raise ValueError("one strength per watermark required")
    n_frames, n_bins = dims
    owner = plan.frame_owner(n_frames, cfg, sample_rate)
    masks = []
    for i, a in enumerate(alphas):
        grid = np.zeros((n_frames, n_bins))
        grid[owner == i, :] = a
        masks.append(RoutingMask(grid, "tdm"))
    return masks


def apply_tf_routing_raw(
    x: AudioBuffer,
    perturbations,
    masks,
    cfg: StftConfig = DEFAULT_STFT,
) -> tuple[AudioBuffer, int]:
    """Route each perturbation through its T-F mask; returns clip count too."""
    if len(perturbations) != len(masks):
        raise ValueError("perturbations and masks must align")
    spec = stft(x, cfg)
    grid = spec.grid.copy()
    for p, m in zip(perturbations, masks):
        if len(p) != len(x):
            raise ValueError("perturbation length mismatch")
        if m.shape != grid.shape:
            raise ValueError(f"mask shape {m.shape} != grid shape {grid.shape}")
        dspec = stft(AudioBuffer(p.delta, x.sample_rate), cfg)
        grid += m.grid * dspec.grid
    out = _istft_array(grid, cfg, len(x))
    out, n_clipped = clip_samples(out)
    return x.replace_samples(out), n_clipped


def apply_tf_routing(
    x: AudioBuffer,
    perturbations,
    masks,
    cfg: StftConfig = DEFAULT_STFT,
) -> AudioBuffer:
    return apply_tf_routing_raw(x, perturbations, masks, cfg)[0]
