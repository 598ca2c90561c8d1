"""Classical watermark embedders/detectors behind a uniform contract.

Three heterogeneous coding schemes with deliberately different footprints:

* spread-spectrum (``ss``): a keyed band-limited pseudo-noise carrier added
  in the time domain (0.5-7 kHz), detected by cross-correlation with a lag
  search so small time shifts are survivable;
* quantization index modulation (``qim``): keyed mid-band STFT magnitude
  cells snapped to bit-indexed dithered lattices (1.5-6 kHz), detected by a
  lattice-membership vote; gain-sensitive by construction;
* phase perturbation (``phase``): keyed low-band phase offsets (0.3-3 kHz)
  that leave magnitudes untouched, detected by correlating observed phases
  against the keyed sign pattern.

Every embedder is a pure function returning the additive time-domain
perturbation ``delta`` so the multiplexing engine can treat backends as
opaque. Every detector returns a ``DetectionScore`` whose ``z`` is
normalised against a null estimated from key-mismatched statistics, so a
wrong key or an unwatermarked signal scores near zero regardless of content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import prng
from .audio import DEFAULT_STFT, AudioBuffer, Spectrogram, StftConfig, stft

BACKEND_IDS = ("ss", "qim", "phase")

# Spectral footprints (Hz). Chosen disjoint enough that typical attacks
# (lowpass, shifts, codecs) hit the three backends differently.
SS_BAND = (500.0, 7000.0)
QIM_BAND = (1500.0, 6000.0)
PHASE_BAND = (300.0, 3000.0)

# Default strengths; each single watermark lands near 20 dB host SNR on the
# reference corpus (speech-shaped noise at RMS 0.1).
SS_ALPHA = 0.01
QIM_STEP = 0.6
PHASE_THETA = 0.24

SS_CHIP_LEN = 1000          # samples per payload chip segment
SS_PILOT_SHARE = 1.0 / 3.0  # power fraction of the payload-independent pilot
SS_SEARCH_RADIUS = 800      # lag search half-width (samples)
_SS_NULL_KEYS = 2           # extra key-mismatched correlations for the null
_SS_GUARD = 32              # lags skipped around the search window

QIM_CELLS_PER_BIT = 96
QIM_PILOT_FRACTION = 0.5       # keyed share of cells carrying the presence pilot

PHASE_PAYLOAD_FRACTION = 0.4   # keyed share of bin pairs carrying payload bits

# rfft(hann^2)[0] / frame_len; the Hann^2 spectrum is nonzero only at lags
# 0, +-1, +-2, which is what makes the closed-form cell-edit atoms exact for
# cells spaced three or more bins apart.
_HANN2_A0 = 0.375

# domain separation tags for subkey derivation
_TAG_SS_PILOT = 0x51
_TAG_SS_DATA = 0x52
_TAG_SS_NULL = 0x53
_TAG_QIM_CELLS = 0x61
_TAG_QIM_DITHER = 0x62
_TAG_PHASE_PN = 0x71


@dataclass(frozen=True)
class WatermarkKey:
    """Secret seed plus the backend it addresses."""

    seed: int
    backend_id: str

    def __post_init__(self):
        if self.backend_id not in BACKEND_IDS:
            raise ValueError(f"unknown backend {self.backend_id!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Payload:
    """Message bits, 1..64 of them."""

    bits: tuple

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not 1 <= len(bits) <= 64:
            raise ValueError(f"payload length {len(bits)} outside 1..64")
        if any(b not in (0, 1) for b in bits):
            raise ValueError("payload bits must be 0/1")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    def signs(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64) * 2.0 - 1.0

    @classmethod
    def random(cls, seed: int, n_bits: int = 16) -> "Payload":
        u = prng.pn_uniform(prng.derive(seed, 0x0B175), n_bits)
        return cls(tuple(int(v >= 0.5) for v in u))


@dataclass(frozen=True)
class Perturbation:
    """Additive time-domain watermark delta, same length as the host."""

    delta: np.ndarray
    backend_id: str

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=np.float64)
        if delta.ndim != 1:
            raise ValueError("delta must be 1-D")
        if not np.all(np.isfinite(delta)):
            raise ValueError("delta contains non-finite values")
        object.__setattr__(self, "delta", delta)

    def __len__(self) -> int:
        return self.delta.size


@dataclass(frozen=True)
class DetectionScore:
    """Raw statistic, null-normalised z, and log-odds (slope 1: logit == z)."""

    raw: float
    z: float
    logit: float
    bits: tuple | None = None

    def __post_init__(self):
        for name in ("raw", "z", "logit"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite detection score field {name}")


def _band_bins(cfg: StftConfig, sample_rate: int, band: tuple) -> np.ndarray:
    freqs = cfg.bin_hz(sample_rate)
    lo, hi = band
    sel = np.flatnonzero((freqs >= lo) & (freqs < hi))
    if sel.size == 0:
        raise ValueError(f"band {band} selects no STFT bins")
    return sel


def _bandlimit(x: np.ndarray, sample_rate: int, band: tuple) -> np.ndarray:
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / sample_rate)
    spec[(freqs < band[0]) | (freqs >= band[1])] = 0.0
    return np.fft.irfft(spec, n=x.size)


# ---------------------------------------------------------------------------
# spread spectrum
# ---------------------------------------------------------------------------


def _ss_bit_of_sample(n_samples: int, n_bits: int) -> np.ndarray:
    """Chip segment layout: segment s of SS_CHIP_LEN samples carries bit s mod B."""
    seg = np.arange(n_samples) // SS_CHIP_LEN
    return seg % n_bits


def ss_capacity_bits(n_samples: int) -> int:
    return n_samples // SS_CHIP_LEN


def ss_carrier(
    key: WatermarkKey,
    payload: Payload,
    n_samples: int,
    sample_rate: int,
    band: tuple = SS_BAND,
) -> np.ndarray:
    """Unit-RMS band-limited carrier: pilot stream plus sign-modulated chips."""
    if ss_capacity_bits(n_samples) < len(payload):
        raise ValueError(
            f"payload of {len(payload)} bits exceeds chip capacity "
            f"{ss_capacity_bits(n_samples)} for {n_samples} samples"
        )
    pilot = prng.pn_signs(prng.derive(key.seed, _TAG_SS_PILOT), n_samples)
    data = prng.pn_signs(prng.derive(key.seed, _TAG_SS_DATA), n_samples)
    signs = payload.signs()[_ss_bit_of_sample(n_samples, len(payload))]
    raw = math.sqrt(SS_PILOT_SHARE) * pilot + math.sqrt(1 - SS_PILOT_SHARE) * data * signs
    carrier = _bandlimit(raw, sample_rate, band)
    return carrier / max(np.sqrt(np.mean(carrier**2)), 1e-30)


def ss_embed(
    x: AudioBuffer,
    payload: Payload,
    key: WatermarkKey,
    alpha: float = SS_ALPHA,
    band: tuple = SS_BAND,
) -> Perturbation:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    carrier = ss_carrier(key, payload, len(x), x.sample_rate, band)
    return Perturbation(alpha * carrier, "ss")


def _ss_templates(key: WatermarkKey, n: int, sample_rate: int, band: tuple):
    pilot = _bandlimit(prng.pn_signs(prng.derive(key.seed, _TAG_SS_PILOT), n), sample_rate, band)
    data = _bandlimit(prng.pn_signs(prng.derive(key.seed, _TAG_SS_DATA), n), sample_rate, band)
    pilot /= max(np.linalg.norm(pilot), 1e-30)
    return pilot, data


def _circular_xcorr(y_fft: np.ndarray, template: np.ndarray) -> np.ndarray:
    """c[d] = sum_n y[n] * template[n - d] (circular)."""
    t_fft = np.fft.rfft(template)
    return np.fft.irfft(y_fft * np.conj(t_fft), n=template.size)


def _window_maxes(c: np.ndarray, width: int, skip_lo: int, skip_hi: int) -> list:
    """Maxima of disjoint lag windows, excluding the wrapped search region."""
    n = c.size
    maxes = []
    start = skip_hi
    while start + width <= n - skip_lo:
        maxes.append(float(np.max(c[start : start + width])))
        start += width
    return maxes


def ss_detect(
    y: AudioBuffer,
    key: WatermarkKey,
    band: tuple = SS_BAND,
    search_radius: int = SS_SEARCH_RADIUS,
    n_bits: int = 16,
) -> DetectionScore:
    """Correlation detector with a +-search_radius lag search.

    The detection statistic is the maximum pilot correlation inside the lag
    window. Its null scale is estimated from windowed maxima of
    key-mismatched correlations: the same correlation at shifted lags
    (shifted fresh PN is distributionally a different key) plus full
    cross-correlations against independently derived keys.
    """
    n = len(y)
    if n < SS_CHIP_LEN:
        raise ValueError(f"signal of {n} samples shorter than one chip block")
    radius = min(search_radius, n // 8)
    width = 2 * radius + 1

    pilot_t, data_t = _ss_templates(key, n, y.sample_rate, band)
    y_fft = np.fft.rfft(y.samples)
    c = _circular_xcorr(y_fft, pilot_t)

    # lags d in [-radius, radius] live at c[d % n]
    window = np.concatenate([c[n - radius :], c[: radius + 1]])
    stat = float(np.max(window))
    d_hat = int(np.argmax(window)) - radius

    null_maxes = _window_maxes(c, width, radius + _SS_GUARD, radius + _SS_GUARD)
    for j in range(_SS_NULL_KEYS):
        null_key = WatermarkKey(prng.derive(key.seed, _TAG_SS_NULL, j + 1), key.backend_id)
        null_pilot, _ = _ss_templates(null_key, n, y.sample_rate, band)
        c_null = _circular_xcorr(y_fft, null_pilot)
        null_maxes.extend(_window_maxes(c_null, width, 0, 0))
    mu = float(np.mean(null_maxes))
    sigma = float(np.std(null_maxes, ddof=1))
    sigma = max(sigma, 1e-30)

    raw = stat - mu
    z = raw / sigma

    aligned = np.roll(y.samples, -d_hat)
    bit_of = _ss_bit_of_sample(n, n_bits)
    prod = aligned * data_t
    corr = np.bincount(bit_of, weights=prod, minlength=n_bits)
    bits = tuple(int(v > 0) for v in corr)
    return DetectionScore(raw=raw, z=z, logit=z, bits=bits)


# ---------------------------------------------------------------------------
# exact STFT cell edits
# ---------------------------------------------------------------------------


def _writable_even_frames(n_frames: int, orig_len: int, cfg: StftConfig) -> np.ndarray:
    """Even frames whose full atom support lies inside the signal.

    Frame t covers signal samples [t*hop - hop, t*hop - hop + frame_len); the
    first and last frames spill into the zero padding, so edits there cannot
    be realised exactly and those frames are excluded.
    """
    t_max = (orig_len + cfg.hop - cfg.frame_len) // cfg.hop
    return np.arange(2, min(n_frames, t_max + 1), 2)


def _add_cell_atoms(
    delta: np.ndarray,
    frames: np.ndarray,
    bins: np.ndarray,
    coeffs: np.ndarray,
    cfg: StftConfig,
) -> None:
    """Add windowed sinusoid atoms so that stft(delta)[frame, bin] == target.

    An atom w(n) * (C e^{j w n} + conj) analysed at bin b picks up
    C * A(b - k) with A the Hann^2 spectrum, which vanishes for |b - k| > 2.
    Callers pre-divide by the 2x2 (pair) or scalar (isolated cell) system, so
    placing the coefficients and windowing once realises the edit exactly.
    """
    win = cfg.window_values()
    order = np.argsort(frames, kind="stable")
    frames = frames[order]
    bins = bins[order]
    coeffs = coeffs[order]
    uniq, start = np.unique(frames, return_index=True)
    boundaries = np.append(start, frames.size)
    spec_rows = np.zeros((uniq.size, cfg.n_bins), dtype=np.complex128)
    for i in range(uniq.size):
        sl = slice(boundaries[i], boundaries[i + 1])
        spec_rows[i, bins[sl]] = coeffs[sl]
    atoms = np.fft.irfft(spec_rows, n=cfg.frame_len, axis=1) * cfg.frame_len * win[None, :]
    for i, t in enumerate(uniq):
        start_n = int(t) * cfg.hop - cfg.hop
        delta[start_n : start_n + cfg.frame_len] += atoms[i]


# ---------------------------------------------------------------------------
# quantization index modulation
# ---------------------------------------------------------------------------


def _qim_cells(key: WatermarkKey, n_frames: int, orig_len: int, band_bins: np.ndarray,
               n_bits: int, cfg: StftConfig):
    """Keyed (frame, bin) cells: even interior frames, bins >= 3 apart.

    The spacing keeps each cell outside every other cell's atom leakage, so
    the embedding is exact and cells stay on-lattice in the resynthesized
    signal.
    """
    frames_avail = _writable_even_frames(n_frames, orig_len, cfg)
    n_slots = band_bins.size // 4
    if n_slots == 0 or frames_avail.size == 0:
        raise ValueError("signal too short for QIM cell allocation")
    population = frames_avail.size * n_slots
    n_cells = n_bits * QIM_CELLS_PER_BIT
    if population < n_cells:
        n_cells = (population // n_bits) * n_bits
        if n_cells == 0:
            raise ValueError("signal too short for QIM cell allocation")
    flat = prng.pn_choice(prng.derive(key.seed, _TAG_QIM_CELLS, n_frames), population, n_cells)
    frames = frames_avail[flat // n_slots]
    slot = flat % n_slots
    u = prng.pn_uint64(prng.derive(key.seed, _TAG_QIM_CELLS, 2), n_cells)
    offset_in_slot = (u & np.uint64(1)).astype(np.int64) + 1
    bins = band_bins[0] + slot * 4 + offset_in_slot
    dither = prng.pn_uniform(prng.derive(key.seed, _TAG_QIM_DITHER), n_cells)
    # keyed split: pilot cells carry a PN-selected lattice (blind presence
    # check against a known answer), the rest carry payload bits round-robin
    pilot = ((u >> np.uint64(1)) & np.uint64(0xFFFF)).astype(np.float64) / 2**16
    pilot_mask = pilot < QIM_PILOT_FRACTION
    signs = (((u >> np.uint64(17)) & np.uint64(1)).astype(np.float64)) * 2.0 - 1.0
    bit_idx = np.cumsum(~pilot_mask) - 1
    bit_idx = np.where(pilot_mask, 0, bit_idx % n_bits)
    return frames, bins, bit_idx, dither, pilot_mask, signs


def _lattice_distance(m: np.ndarray, offset: np.ndarray, step: float) -> np.ndarray:
    r = np.mod(m - offset, step)
    return np.minimum(r, step - r)


def _quantize_to_lattice(m: np.ndarray, offset: np.ndarray, step: float) -> np.ndarray:
    q = np.round((m - offset) / step) * step + offset
    return np.where(q < 0, q + step, q)


def qim_embed(
    x: AudioBuffer,
    payload: Payload,
    key: WatermarkKey,
    delta_step: float = QIM_STEP,
    cfg: StftConfig = DEFAULT_STFT,
) -> Perturbation:
    """Snap keyed magnitude cells onto the bit's dithered lattice.

    The edit is realised as a minimum-energy time-domain perturbation whose
    STFT hits the quantised targets exactly, so re-embedding the output with
    the same key and payload changes nothing.
    """
    if delta_step <= 0:
        raise ValueError("delta_step must be positive")
    spec = stft(x, cfg)
    band_bins = _band_bins(cfg, x.sample_rate, QIM_BAND)
    frames, bins, bit_idx, dither, pilot_mask, signs = _qim_cells(
        key, spec.n_frames, len(x), band_bins, len(payload), cfg
    )
    half = np.asarray(payload.bits, dtype=np.float64)[bit_idx]
    half[pilot_mask] = (signs[pilot_mask] < 0).astype(np.float64)
    offset = dither * delta_step + half * (delta_step / 2.0)

    cells = spec.grid[frames, bins]
    mags = np.abs(cells)
    target_mag = _quantize_to_lattice(mags, offset, delta_step)
    phasor = np.where(mags > 1e-12, cells / np.maximum(mags, 1e-12), 1.0)
    err = phasor * target_mag - cells

    delta = np.zeros(len(x))
    scale = _HANN2_A0 * cfg.frame_len  # == sum(hann^2), the isolated-cell gain
    _add_cell_atoms(delta, frames, bins, err / scale, cfg)
    return Perturbation(delta, "qim")


def _qim_detect_spec(
    spec: Spectrogram,
    key: WatermarkKey,
    delta_step: float,
    n_bits: int,
) -> DetectionScore:
    """Lattice-membership vote. Pilot cells have a keyed expected lattice, so
    each is an exactly fair coin on unwatermarked input (binomial null)."""
    band_bins = _band_bins(spec.config, spec.sample_rate, QIM_BAND)
    frames, bins, bit_idx, dither, pilot_mask, signs = _qim_cells(
        key, spec.n_frames, spec.orig_len, band_bins, n_bits, spec.config
    )
    mags = np.abs(spec.grid[frames, bins])
    d0 = _lattice_distance(mags, dither * delta_step, delta_step)
    d1 = _lattice_distance(mags, dither * delta_step + delta_step / 2.0, delta_step)
    votes_half = d1 < d0

    expected_half = signs[pilot_mask] < 0
    n = int(np.count_nonzero(pilot_mask))
    matches = int(np.count_nonzero(votes_half[pilot_mask] == expected_half))
    raw = matches / n - 0.5
    z = (matches - n / 2.0) / math.sqrt(n / 4.0)

    data = ~pilot_mask
    ones = np.bincount(bit_idx[data], weights=votes_half[data].astype(np.int64),
                       minlength=n_bits)
    counts = np.bincount(bit_idx[data], minlength=n_bits)
    bits = tuple(int(2 * o > c) for o, c in zip(ones, np.maximum(counts, 1)))
    return DetectionScore(raw=raw, z=z, logit=z, bits=bits)


def qim_detect(
    y: AudioBuffer,
    key: WatermarkKey,
    delta_step: float = QIM_STEP,
    cfg: StftConfig = DEFAULT_STFT,
    n_bits: int = 16,
) -> DetectionScore:
    return _qim_detect_spec(stft(y, cfg), key, delta_step, n_bits)


# ---------------------------------------------------------------------------
# phase perturbation
# ---------------------------------------------------------------------------


def _phase_step(theta: float) -> float:
    """Circle-consistent lattice step with per-bin offsets bounded by theta.

    Each bin of a pair moves by at most a quarter lattice step, so the step is
    4*theta rounded to an exact divisor of 2*pi (the wrapped difference lives
    on the circle; a non-divisor step would break the lattice at the seam).
    """
    k = max(2, int(round(2.0 * math.pi / (4.0 * theta))))
    return 2.0 * math.pi / k


# bin distance between the two members of a phase pair; the Hann^2 spectrum
# vanishes at lag 3, so the two embedding atoms decouple exactly
_PHASE_PAIR_GAP = 3
_PHASE_PAIR_STRIDE = 6


def _phase_pairs(spec_frames: int, orig_len: int, cfg: StftConfig, sample_rate: int):
    """(frame, lo-bin) grid of bin pairs on writable even frames.

    Nearby bins are paired because any LTI channel adds nearly the same
    phase to both, which cancels in their difference. The pair gap and the
    stride between pairs both sit at lag >= 3 of the Hann^2 spectrum, so
    every atom write lands exactly without touching any other pair.
    """
    band_bins = _band_bins(cfg, sample_rate, PHASE_BAND)
    lo_bins = band_bins[: -_PHASE_PAIR_GAP : _PHASE_PAIR_STRIDE]
    frames = _writable_even_frames(spec_frames, orig_len, cfg)
    if frames.size == 0 or lo_bins.size == 0:
        raise ValueError("signal too short for phase pair allocation")
    ff, bb = np.meshgrid(frames, lo_bins, indexing="ij")
    return ff.ravel(), bb.ravel()


def _phase_pair_keys(key: WatermarkKey, frames: np.ndarray, bins: np.ndarray, n_bins: int):
    """Per-pair keyed dither in [0,1), PN sign, payload membership and bit slot."""
    pair_ids = frames.astype(np.uint64) * np.uint64(n_bins) + bins.astype(np.uint64)
    base = np.uint64(prng.derive(key.seed, _TAG_PHASE_PN))
    with np.errstate(over="ignore"):
        h1 = prng._finalize(base + (pair_ids + np.uint64(1)) * prng.GAMMA)
        h2 = prng._finalize(h1 + prng.GAMMA)
    dither = h1.astype(np.float64) / float(2**64)
    signs = (h2 >> np.uint64(63)).astype(np.float64) * 2.0 - 1.0
    frac = (h2 & np.uint64(0xFFFF)).astype(np.float64) / float(2**16)
    payload_mask = frac < PHASE_PAYLOAD_FRACTION
    bit_slot = ((h2 >> np.uint64(16)) & np.uint64(0xFFFFFFFF)).astype(np.int64)
    return dither, signs, payload_mask, bit_slot


def _pair_diff(grid: np.ndarray, frames: np.ndarray, bins: np.ndarray) -> np.ndarray:
    return np.angle(grid[frames, bins] * np.conj(grid[frames, bins + _PHASE_PAIR_GAP]))


def phase_embed(
    x: AudioBuffer,
    payload: Payload,
    key: WatermarkKey,
    theta: float = PHASE_THETA,
    cfg: StftConfig = DEFAULT_STFT,
) -> Perturbation:
    """Quantise adjacent-bin phase differences to keyed dithered lattices.

    The PN sign picks the lattice for pilot pairs, the payload bit for data
    pairs. Both bins of a pair rotate by half the correction in opposite
    directions, leaving all magnitudes untouched.
    """
    if not 0 < theta <= math.pi / 4:
        raise ValueError("theta must be in (0, pi/4]")
    spec = stft(x, cfg)
    frames, bins = _phase_pairs(spec.n_frames, len(x), cfg, x.sample_rate)
    dither, signs, payload_mask, bit_slot = _phase_pair_keys(key, frames, bins, cfg.n_bins)
    step = _phase_step(theta)

    offsets = np.where(signs > 0, 0.0, step / 2.0)
    bit_idx = bit_slot[payload_mask] % len(payload)
    offsets[payload_mask] = np.asarray(payload.bits)[bit_idx] * (step / 2.0)
    target_off = dither * step + offsets

    lo = spec.grid[frames, bins]
    hi = spec.grid[frames, bins + _PHASE_PAIR_GAP]
    dphi = np.angle(lo * np.conj(hi))
    q = np.round((dphi - target_off) / step) * step + target_off
    rot = np.exp(1j * (q - dphi) / 2.0)
    err_lo = lo * rot - lo
    err_hi = hi * np.conj(rot) - hi

    # pair members sit at lag 3 of the Hann^2 spectrum: the two atoms do not
    # interact and each reduces to an exact scalar solve
    scale = _HANN2_A0 * cfg.frame_len
    delta = np.zeros(len(x))
    all_frames = np.concatenate([frames, frames])
    all_bins = np.concatenate([bins, bins + _PHASE_PAIR_GAP])
    all_coeffs = np.concatenate([err_lo, err_hi]) / scale
    _add_cell_atoms(delta, all_frames, all_bins, all_coeffs, cfg)
    return Perturbation(delta, "phase")


def _phase_detect_spec(
    spec: Spectrogram,
    key: WatermarkKey,
    theta: float,
    n_bits: int,
) -> DetectionScore:
    frames, bins = _phase_pairs(spec.n_frames, spec.orig_len, spec.config, spec.sample_rate)
    dither, signs, payload_mask, bit_slot = _phase_pair_keys(
        key, frames, bins, spec.config.n_bins
    )
    step = _phase_step(theta)

    dphi = _pair_diff(spec.grid, frames, bins)
    r = np.mod(dphi - dither * step, step)
    near_half = np.abs(r - step / 2.0) < np.minimum(r, step - r)

    pilot = ~payload_mask
    expected_half = signs[pilot] < 0
    matches = int(np.count_nonzero(near_half[pilot] == expected_half))
    n = int(np.count_nonzero(pilot))
    if n == 0:
        raise ValueError("no pilot pairs available; signal too short")
    # keyed dither makes each pilot pair an exact fair coin under the null
    raw = matches / n - 0.5
    z = (matches - n / 2.0) / math.sqrt(n / 4.0)

    votes_one = near_half[payload_mask].astype(np.int64)
    bit_idx = bit_slot[payload_mask] % n_bits
    ones = np.bincount(bit_idx, weights=votes_one, minlength=n_bits)
    counts = np.bincount(bit_idx, minlength=n_bits)
    bits = tuple(int(2 * o > c) for o, c in zip(ones, np.maximum(counts, 1)))
    return DetectionScore(raw=raw, z=z, logit=z, bits=bits)


def phase_detect(
    y: AudioBuffer,
    key: WatermarkKey,
    theta: float = PHASE_THETA,
    cfg: StftConfig = DEFAULT_STFT,
    n_bits: int = 16,
) -> DetectionScore:
    return _phase_detect_spec(stft(y, cfg), key, theta, n_bits)


# ---------------------------------------------------------------------------
# dispatch helpers
# ---------------------------------------------------------------------------

DEFAULT_STRENGTHS = {"ss": SS_ALPHA, "qim": QIM_STEP, "phase": PHASE_THETA}


def embed(
    backend_id: str,
    x: AudioBuffer,
    payload: Payload,
    key: WatermarkKey,
    strength: float | None = None,
) -> Perturbation:
    if key.backend_id != backend_id:
        raise ValueError(f"key for {key.backend_id!r} used with backend {backend_id!r}")
    s = DEFAULT_STRENGTHS[backend_id] if strength is None else strength
    if backend_id == "ss":
        return ss_embed(x, payload, key, alpha=s)
    if backend_id == "qim":
        return qim_embed(x, payload, key, delta_step=s)
    if backend_id == "phase":
        return phase_embed(x, payload, key, theta=s)
    raise ValueError(f"unknown backend {backend_id!r}")


def detect(
    backend_id: str,
    y: AudioBuffer,
    key: WatermarkKey,
    strength: float | None = None,
    spec: Spectrogram | None = None,
    n_bits: int = 16,
) -> DetectionScore:
    """Detect one watermark; pass a precomputed spectrogram to share the STFT."""
    s = DEFAULT_STRENGTHS[backend_id] if strength is None else strength
    if backend_id == "ss":
        return ss_detect(y, key, n_bits=n_bits)
    if backend_id == "qim":
        sp = spec if spec is not None else stft(y)
        return _qim_detect_spec(sp, key, s, n_bits)
    if backend_id == "phase":
        sp = spec if spec is not None else stft(y)
        return _phase_detect_spec(sp, key, s, n_bits)
    raise ValueError(f"unknown backend {backend_id!r}")
