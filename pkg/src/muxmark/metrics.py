"""Quality and robustness metrics: SNR, STOI, ROC AUC, TPR at fixed FPR.

The ROC statistics are rank-exact (Mann-Whitney with ties counted 0.5) and
the operating-point helpers share one documented threshold convention:
scores count as positive when >= threshold, and the threshold is the
smallest candidate value whose empirical false-positive rate on the
negative pool does not exceed the target.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import signal as sps
from scipy.stats import rankdata

from .audio import AudioBuffer

INF_SNR = math.inf

# STOI constants (standard parameterisation)
_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_N_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG_FRAMES = 30          # 384 ms at 10 kHz / 128 hop
_STOI_DYN_RANGE_DB = 40.0
_STOI_CLIP_DB = -15.0


def snr_db(ref: AudioBuffer, test: AudioBuffer) -> float:
    """10 log10(||ref||^2 / ||ref - test||^2); +inf when identical."""
    if len(ref) != len(test):
        raise ValueError(f"length mismatch {len(ref)} != {len(test)}")
    ref_energy = float(np.sum(ref.samples**2))
    if ref_energy == 0.0:
        raise ValueError("reference signal is all zeros")
    err = float(np.sum((ref.samples - test.samples) ** 2))
    if err == 0.0:
        return INF_SNR
    return 10.0 * math.log10(ref_energy / err)


def _third_octave_bands(n_bins: int, fs: int, nfft: int):
    freqs = np.arange(n_bins) * fs / nfft
    centers = _STOI_MIN_FREQ * 2.0 ** (np.arange(_STOI_N_BANDS) / 3.0)
    lo = centers / 2.0 ** (1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    bands = np.zeros((_STOI_N_BANDS, n_bins))
    for j in range(_STOI_N_BANDS):
        bands[j, (freqs >= lo[j]) & (freqs < hi[j])] = 1.0
    return bands


def _stoi_frames(x: np.ndarray) -> np.ndarray:
    n = (x.size - _STOI_FRAME) // _STOI_HOP + 1
    if n <= 0:
        return np.empty((0, _STOI_FRAME))
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n)[:, None]
    return x[idx] * np.hanning(_STOI_FRAME)[None, :]


def stoi(ref: AudioBuffer, test: AudioBuffer) -> float:
    """Short-time objective intelligibility of ``test`` given ``ref``.

    Standard recipe: resample both to 10 kHz, drop frames more than 40 dB
    below the loudest reference frame, take one-third-octave band envelopes
    (15 bands from 150 Hz), and average the normalised, clipped correlation
    of 384 ms segments. Returns a value in roughly [0, 1]; identical inputs
    give 1.0.
    """
    if len(ref) != len(test):
        raise ValueError("length mismatch")
    if ref.sample_rate != test.sample_rate:
        raise ValueError("sample-rate mismatch")
    g = math.gcd(_STOI_FS, ref.sample_rate)
    x = sps.resample_poly(ref.samples, _STOI_FS // g, ref.sample_rate // g)
    y = sps.resample_poly(test.samples, _STOI_FS // g, test.sample_rate // g)

    xf = _stoi_frames(x)
    yf = _stoi_frames(y)
    if xf.shape[0] == 0:
        raise ValueError("signal too short for STOI")
    energy_db = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + 1e-30)
    keep = energy_db > energy_db.max() - _STOI_DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    if xf.shape[0] < _STOI_SEG_FRAMES:
        raise ValueError(
            f"only {xf.shape[0]} voiced frames after trimming; need {_STOI_SEG_FRAMES}"
        )

    xs = np.abs(np.fft.rfft(xf, n=_STOI_NFFT, axis=1))
    ys = np.abs(np.fft.rfft(yf, n=_STOI_NFFT, axis=1))
    bands = _third_octave_bands(xs.shape[1], _STOI_FS, _STOI_NFFT)
    xb = np.sqrt(xs**2 @ bands.T)  # [frames x bands] band envelopes
    yb = np.sqrt(ys**2 @ bands.T)

    beta = 10.0 ** (-_STOI_CLIP_DB / 20.0)  # clip ceiling factor
    n_seg = xb.shape[0] - _STOI_SEG_FRAMES + 1
    corrs = []
    for m in range(n_seg):
        X = xb[m : m + _STOI_SEG_FRAMES]  # [30 x bands]
        Y = yb[m : m + _STOI_SEG_FRAMES]
        norm_x = np.linalg.norm(X, axis=0)
        norm_y = np.linalg.norm(Y, axis=0)
        scale = norm_x / np.maximum(norm_y, 1e-30)
        Yn = np.minimum(Y * scale[None, :], (1.0 + 1.0 / beta) * X)
        Xc = X - X.mean(axis=0)
        Yc = Yn - Yn.mean(axis=0)
        denom = np.linalg.norm(Xc, axis=0) * np.linalg.norm(Yc, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(denom > 1e-30, np.sum(Xc * Yc, axis=0) / np.maximum(denom, 1e-30), 0.0)
        corrs.append(d)
    return float(np.mean(corrs))


def roc_auc(pos, neg) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg), rank-exact."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need non-empty score lists")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = float(np.sum(ranks[: pos.size])) - pos.size * (pos.size + 1) / 2.0
    return u / (pos.size * neg.size)


def _threshold_candidates(neg: np.ndarray) -> np.ndarray:
    # descending unique observed scores, preceded by a value just above the
    # largest negative (the smallest threshold that rejects every negative)
    top = np.nextafter(neg.max(), math.inf)
    return np.concatenate([[top], np.unique(neg)[::-1]])


def tpr_at_fpr(pos, neg, fpr: float) -> float:
    """TPR at the smallest threshold whose empirical FPR is <= target.

    Convention (documented, used identically by calibrate_threshold): sort
    the negatives descending; with k = floor(fpr * |neg|) the threshold is
    the k-th largest negative for tie-free scores (index k-1), or +inf when
    even the largest negative would exceed the target rate. A score counts
    as positive when >= threshold.
    """
    threshold = calibrate_threshold(neg, fpr, _validate_count=False)
    pos = np.asarray(pos, dtype=np.float64)
    if pos.size == 0:
        raise ValueError("need non-empty positive scores")
    return float(np.mean(pos >= threshold))


def calibrate_threshold(neg, target_fpr: float, _validate_count: bool = True) -> float:
    """Smallest threshold with empirical FPR <= target on the negative pool."""
    neg = np.asarray(neg, dtype=np.float64)
    if neg.size == 0:
        raise ValueError("need non-empty negative scores")
    if not 0.0 < target_fpr < 1.0:
        raise ValueError(f"target FPR {target_fpr} outside (0, 1)")
    if _validate_count and neg.size < 1.0 / target_fpr:
        raise ValueError(
            f"{neg.size} negatives cannot calibrate a {target_fpr:.4g} FPR "
            f"(need at least {math.ceil(1.0 / target_fpr)})"
        )
    best = math.inf
    for t in _threshold_candidates(neg):
        if np.mean(neg >= t) <= target_fpr:
            best = float(t)
        else:
            break
    return best
