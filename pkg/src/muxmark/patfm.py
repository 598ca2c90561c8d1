"""Perceptual-adaptive time-frequency multiplexing.

Masking capacity is estimated per T-F tile (spectral flatness, local SNR, or
their mean), tiles are dealt to watermarks so each gets a balanced share of
capacity, a gain curve scales strengths up where masking headroom is high,
and detector outputs are fused with a weighted log-odds rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backends
from .audio import DEFAULT_STFT, AudioBuffer, Spectrogram, StftConfig, stft
from .backends import DetectionScore
from .mux import BandPlan, RoutingMask, apply_tf_routing_raw, band_bin_mask

GAIN_FLOOR = 0.25
GAIN_SLOPE = 0.75

POWER_FLOOR = 1e-12

MASK_MODES = ("flatness", "snr", "mean")

DEFAULT_SLOT_MS = 60.0

# tile-band count for the perceptual grid (uniform bands up to Nyquist)
DEFAULT_TILE_BANDS = 8


def default_tile_bands(sample_rate: int = 16000, n_bands: int = DEFAULT_TILE_BANDS) -> BandPlan:
    edges = np.linspace(0.0, sample_rate / 2, n_bands + 1)
    return BandPlan(tuple((edges[i], edges[i + 1]) for i in range(n_bands)))


@dataclass(frozen=True)
class PerceptualMask:
    """Per-tile masking headroom in [0, 1] over an [n_slots x n_bands] grid."""

    tiles: np.ndarray
    slot_len_ms: float
    band_edges: tuple

    def __post_init__(self):
        tiles = np.asarray(self.tiles, dtype=np.float64)
        if tiles.ndim != 2:
            raise ValueError("mask tiles must be 2-D [n_slots x n_bands]")
        if not np.all(np.isfinite(tiles)):
            raise ValueError("mask tiles contain non-finite values")
        if np.any(tiles < 0) or np.any(tiles > 1):
            raise ValueError("mask tiles must lie in [0, 1]")
        object.__setattr__(self, "tiles", tiles)

    @property
    def shape(self) -> tuple:
        return self.tiles.shape


@dataclass(frozen=True)
class MultiplexPlan:
    """Tile ownership and gains produced from a perceptual mask."""

    tile_owner: np.ndarray
    tile_gain: np.ndarray
    n_wm: int

    def __post_init__(self):
        owner = np.asarray(self.tile_owner, dtype=np.int64)
        gain = np.asarray(self.tile_gain, dtype=np.float64)
        if owner.shape != gain.shape:
            raise ValueError("owner and gain grids must share a shape")
        if np.any(owner < 0) or np.any(owner >= self.n_wm):
            raise ValueError("tile owner out of range")
        if np.any(gain < 0) or not np.all(np.isfinite(gain)):
            raise ValueError("tile gains must be finite and >= 0")
        object.__setattr__(self, "tile_owner", owner)
        object.__setattr__(self, "tile_gain", gain)


@dataclass(frozen=True)
class FusionWeights:
    """Normalised non-negative weights, one per detector."""

    w: tuple

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and >= 0")
        total = float(w.sum())
        if total <= 0:
            raise ValueError("weights sum to zero")
        object.__setattr__(self, "w", tuple(float(v) for v in w / total))

    def __len__(self) -> int:
        return len(self.w)

    @classmethod
    def uniform(cls, n: int) -> "FusionWeights":
        return cls((1.0,) * n)


def _slot_of_frame(n_frames: int, slot_len_ms: float, cfg: StftConfig, sample_rate: int):
    fps = max(1, math.ceil(slot_len_ms * sample_rate / 1000.0 / cfg.hop))
    slot = np.arange(n_frames) // fps
    return slot, int(slot[-1]) + 1


def _tile_powers(
    spec: Spectrogram, bands: BandPlan, slot_len_ms: float
) -> tuple:
    """Power samples per (slot, band) tile; raises on empty tiles."""
    slot, n_slots = _slot_of_frame(
        spec.n_frames, slot_len_ms, spec.config, spec.sample_rate
    )
    power = np.abs(spec.grid) ** 2
    power = np.maximum(power, POWER_FLOOR)
    bin_masks = []
    for band in bands.bands:
        bm = band_bin_mask(band, spec.config, spec.sample_rate)
        if not np.any(bm):
            raise ValueError(f"band {band} is narrower than one STFT bin")
        bin_masks.append(bm)
    return power, slot, n_slots, bin_masks


def spectral_flatness(
    spec: Spectrogram, bands: BandPlan, slot_len_ms: float = DEFAULT_SLOT_MS
) -> PerceptualMask:
    """Per-tile geometric-over-arithmetic mean of power.

    1.0 for a perfectly flat (noise-like) tile, near 0 for tonal content;
    by the AM-GM inequality the value never exceeds 1.
    """
    power, slot, n_slots, bin_masks = _tile_powers(spec, bands, slot_len_ms)
    tiles = np.zeros((n_slots, len(bin_masks)))
    log_power = np.log(power)
    for s in range(n_slots):
        rows = slot == s
        for b, bm in enumerate(bin_masks):
            tile = power[np.ix_(rows, bm)]
            gmean = math.exp(float(np.mean(log_power[np.ix_(rows, bm)])))
            amean = float(np.mean(tile))
            tiles[s, b] = min(gmean / amean, 1.0)
    return PerceptualMask(tiles, slot_len_ms, bands.bands)


def local_snr_mask(
    spec: Spectrogram, bands: BandPlan, slot_len_ms: float = DEFAULT_SLOT_MS
) -> PerceptualMask:
    """Headroom from tile power above the band's 10th-percentile noise floor.

    0 at (or below) the floor, 1.0 at >= 30 dB above it; strong local signal
    presence means more masking headroom for a watermark.
    """
    power, slot, n_slots, bin_masks = _tile_powers(spec, bands, slot_len_ms)
    if n_slots < 10:
        raise ValueError(f"need >= 10 slots for a noise-floor estimate, got {n_slots}")
    tiles = np.zeros((n_slots, len(bin_masks)))
    for b, bm in enumerate(bin_masks):
        slot_power = np.array(
            [float(np.mean(power[np.ix_(slot == s, bm)])) for s in range(n_slots)]
        )
        floor_db = 10.0 * math.log10(float(np.percentile(slot_power, 10)))
        tile_db = 10.0 * np.log10(slot_power)
        tiles[:, b] = np.clip((tile_db - floor_db) / 30.0, 0.0, 1.0)
    return PerceptualMask(tiles, slot_len_ms, bands.bands)


def combined_mask(
    spec: Spectrogram,
    bands: BandPlan,
    slot_len_ms: float = DEFAULT_SLOT_MS,
    mode: str = "mean",
) -> PerceptualMask:
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    if mode == "flatness":
        return spectral_flatness(spec, bands, slot_len_ms)
    if mode == "snr":
        return local_snr_mask(spec, bands, slot_len_ms)
    f = spectral_flatness(spec, bands, slot_len_ms)
    s = local_snr_mask(spec, bands, slot_len_ms)
    return PerceptualMask((f.tiles + s.tiles) / 2.0, slot_len_ms, bands.bands)


def gain_curve(mask_value: np.ndarray, floor: float = GAIN_FLOOR,
               slope: float = GAIN_SLOPE) -> np.ndarray:
    """g(m) = floor + slope * m: the floor keeps every tile detectable."""
    return floor + slope * np.asarray(mask_value, dtype=np.float64)


def build_plan(
    mask: PerceptualMask,
    n_wm: int,
    alphas,
    affinity: list | None = None,
    gain_floor: float = GAIN_FLOOR,
    gain_slope: float = GAIN_SLOPE,
) -> MultiplexPlan:
    """Deal tiles to watermarks, best-masked tiles first, round-robin.

    Ties in mask value break on (slot, band) order so the plan is identical
    across runs and implementations. With ``affinity`` (a band-index set per
    watermark), each watermark takes its best-masked tile within its own
    bands while any remain, then falls back to the global best; tile counts
    stay balanced either way.
    """
    if n_wm < 1:
        raise ValueError("need at least one watermark")
    if len(alphas) != n_wm:
        raise ValueError("one alpha per watermark required")
    n_slots, n_bands = mask.shape
    n_tiles = n_slots * n_bands
    if n_wm > n_tiles:
        raise ValueError(f"{n_wm} watermarks exceed {n_tiles} tiles")

    flat = mask.tiles.ravel()
    order = np.lexsort((np.arange(n_tiles), -flat))  # value desc, then (slot, band)
    owner = np.full(n_tiles, -1, dtype=np.int64)

    if affinity is None:
        owner[order] = np.arange(n_tiles) % n_wm
    else:
        if len(affinity) != n_wm:
            raise ValueError("one affinity set per watermark required")
        band_of = np.arange(n_tiles) % n_bands
        remaining = list(order)
        taken = np.zeros(n_tiles, dtype=bool)
        turn = 0
        while remaining:
            wm = turn % n_wm
            pick = None
            for t in remaining:
                if band_of[t] in affinity[wm]:
                    pick = t
                    break
            if pick is None:
                pick = remaining[0]
            owner[pick] = wm
            taken[pick] = True
            remaining = [t for t in remaining if not taken[t]]
            turn += 1

    alphas = np.asarray(alphas, dtype=np.float64)
    gain = alphas[owner] * gain_curve(flat, gain_floor, gain_slope)
    return MultiplexPlan(owner.reshape(n_slots, n_bands), gain.reshape(n_slots, n_bands), n_wm)


def plan_to_masks(
    plan: MultiplexPlan,
    mask: PerceptualMask,
    dims,
    cfg: StftConfig = DEFAULT_STFT,
    sample_rate: int = 16000,
) -> list:
    """Expand a tile plan into per-watermark full-resolution routing masks."""
    n_frames, n_bins = dims
    slot, n_slots = _slot_of_frame(n_frames, mask.slot_len_ms, cfg, sample_rate)
    if n_slots != plan.tile_owner.shape[0]:
        raise ValueError("plan slots inconsistent with target dims")
    band_of_bin = np.full(n_bins, -1, dtype=np.int64)
    for b, band in enumerate(mask.band_edges):
        band_of_bin[band_bin_mask(band, cfg, sample_rate)] = b

    masks = []
    for i in range(plan.n_wm):
        grid = np.zeros((n_frames, n_bins))
        for b in range(plan.tile_owner.shape[1]):
            bins = band_of_bin == b
            rows = plan.tile_owner[slot, b] == i
            grid[np.ix_(rows, bins)] = plan.tile_gain[slot, b][rows, None]
        masks.append(RoutingMask(grid, "patfm"))
    return masks


def pa_tfm_embed_raw(
    x: AudioBuffer,
    wm_specs,
    alphas,
    cfg: StftConfig = DEFAULT_STFT,
    mask_mode: str = "mean",
    slot_len_ms: float = DEFAULT_SLOT_MS,
    tile_bands: BandPlan | None = None,
    affinity: str | None = None,
    gain_floor: float = GAIN_FLOOR,
    gain_slope: float = GAIN_SLOPE,
) -> tuple[AudioBuffer, int]:
    """Perceptually routed multi-watermark embedding; returns clip count too.

    ``wm_specs`` is a list of (backend_id, payload, key); perturbations are
    computed against the original host at default strengths, then routed
    through the plan's gains. ``affinity="band"`` steers each watermark
    toward tiles overlapping its own spectral footprint.
    """
    ids = [b for b, _, _ in wm_specs]
    if len(set(ids)) != len(ids):
        raise ValueError("backends must be distinct")
    if len(alphas) != len(wm_specs):
        raise ValueError("one alpha per watermark required")
    bands = tile_bands if tile_bands is not None else default_tile_bands(x.sample_rate)
    spec = stft(x, cfg)
    mask = combined_mask(spec, bands, slot_len_ms, mask_mode)

    affin = None
    if affinity == "band":
        affin = [_footprint_bands(b, bands) for b in ids]
    elif affinity is not None:
        raise ValueError(f"unknown affinity mode {affinity!r}")

    plan = build_plan(mask, len(wm_specs), alphas, affinity=affin,
                      gain_floor=gain_floor, gain_slope=gain_slope)
    routing = plan_to_masks(plan, mask, spec.grid.shape, cfg, x.sample_rate)
    perturbations = [
        backends.embed(b, x, payload, key) for b, payload, key in wm_specs
    ]
    return apply_tf_routing_raw(x, perturbations, routing, cfg)


def pa_tfm_embed(
    x: AudioBuffer,
    wm_specs,
    alphas,
    cfg: StftConfig = DEFAULT_STFT,
    **kwargs,
) -> AudioBuffer:
    return pa_tfm_embed_raw(x, wm_specs, alphas, cfg, **kwargs)[0]


def _footprint_bands(backend_id: str, bands: BandPlan) -> set:
    lo, hi = {
        "ss": backends.SS_BAND,
        "qim": backends.QIM_BAND,
        "phase": backends.PHASE_BAND,
    }[backend_id]
    out = set()
    for b, (blo, bhi) in enumerate(bands.bands):
        if blo < hi and bhi > lo:
            out.add(b)
    return out


def fuse_scores(scores, w: FusionWeights) -> DetectionScore:
    """Weighted log-odds fusion; raw and z carry the fused value."""
    if len(scores) != len(w):
        raise ValueError(f"{len(scores)} scores vs {len(w)} weights")
    fused = float(sum(wi * s.logit for wi, s in zip(w.w, scores)))
    return DetectionScore(raw=fused, z=fused, logit=fused)


def reliability_weights(scores, temperature: float = 2.0) -> FusionWeights:
    """Confidence-driven weights: w_i proportional to exp(z_i / T).

    Detectors whose band an attack wiped out sit near z = 0 and get almost
    no say, so the fused log-odds tracks the surviving detector instead of
    diluting it; detectors pushed negative (e.g. lattice aliasing under gain
    changes) are suppressed rather than subtracted.
    """
    zs = np.array([s.z for s in scores])
    e = np.exp((zs - zs.max()) / temperature)
    return FusionWeights(tuple(e / e.sum()))


def calibrated_weights(clean_scores_per_detector) -> FusionWeights:
    """w_i proportional to the mean clean-condition z of detector i."""
    means = np.array([max(float(np.mean(zs)), 0.0) for zs in clean_scores_per_detector])
    if means.sum() <= 0:
        return FusionWeights.uniform(len(clean_scores_per_detector))
    return FusionWeights(tuple(means / means.sum()))
