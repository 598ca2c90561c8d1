import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muxmark.audio import AudioBuffer, synth_speech_like
from muxmark.metrics import INF_SNR, calibrate_threshold, roc_auc, snr_db, stoi, tpr_at_fpr


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def brute_auc(pos, neg):
    wins = ties = 0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def brute_threshold(neg, fpr):
    neg = np.asarray(neg, dtype=float)
    candidates = sorted(set(neg.tolist()) | {np.nextafter(neg.max(), math.inf)})
    ok = [t for t in candidates if np.mean(neg >= t) <= fpr]
    return min(ok)


def brute_tpr(pos, neg, fpr):
    t = brute_threshold(neg, fpr)
    return float(np.mean(np.asarray(pos) >= t))


# ---------------------------------------------------------------------------
# SNR
# ---------------------------------------------------------------------------


def test_snr_identical_is_inf(host3s):
    assert snr_db(host3s, host3s) == INF_SNR


def test_snr_closed_form(host3s):
    noise = host3s.samples * 0.1  # ||noise||^2 = ||ref||^2 / 100
    test = AudioBuffer(host3s.samples + noise, 16000)
    assert abs(snr_db(host3s, test) - 20.0) < 1e-9


def test_snr_negated_signal(host3s):
    test = AudioBuffer(-host3s.samples, 16000)
    assert abs(snr_db(host3s, test) - 10 * math.log10(0.25)) < 1e-9


def test_snr_errors(host3s):
    with pytest.raises(ValueError):
        snr_db(host3s, AudioBuffer(np.zeros(10)))
    with pytest.raises(ValueError):
        snr_db(AudioBuffer(np.zeros(len(host3s))), host3s)


def test_snr_alpha_scaling(host3s):
    err = synth_speech_like(3.0, seed=5).samples
    s1 = snr_db(host3s, AudioBuffer(host3s.samples + 0.01 * err))
    s2 = snr_db(host3s, AudioBuffer(host3s.samples + 0.04 * err))
    assert abs((s1 - s2) - 20 * math.log10(4.0)) < 1e-9


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------


def test_stoi_self_is_one(host3s):
    assert abs(stoi(host3s, host3s) - 1.0) < 1e-6


def test_stoi_monotone_in_noise():
    x = synth_speech_like(3.0, seed=42)
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(len(x))
    scores = []
    for target in (30.0, 20.0, 10.0, 0.0):
        n = noise * np.sqrt(np.sum(x.samples**2) / np.sum(noise**2)) * 10 ** (-target / 20)
        scores.append(stoi(x, AudioBuffer(x.samples + n)))
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_stoi_silence_floors(host3s):
    silent = AudioBuffer(np.zeros(len(host3s)))
    assert stoi(host3s, silent) < 0.1


def test_stoi_too_short():
    x = synth_speech_like(0.2, seed=1)
    with pytest.raises(ValueError):
        stoi(x, x)


# ---------------------------------------------------------------------------
# ROC AUC
# ---------------------------------------------------------------------------


def test_auc_perfect_separation():
    assert roc_auc([5, 6, 7], [1, 2, 3]) == 1.0


def test_auc_identical_distributions():
    scores = [0.1, 0.5, 0.9, 0.3]
    assert roc_auc(scores, scores) == 0.5


def test_auc_hand_case():
    assert roc_auc([2, 0], [1]) == 0.5


def test_auc_matches_brute_force():
    rng = np.random.default_rng(123)
    for _ in range(300):
        n_pos = rng.integers(1, 51)
        n_neg = rng.integers(1, 51)
        # integer scores force ties
        pos = rng.integers(0, 10, n_pos).astype(float)
        neg = rng.integers(0, 10, n_neg).astype(float)
        assert roc_auc(pos, neg) == pytest.approx(brute_auc(pos, neg), abs=1e-12)


@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30),
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30),
)
@settings(max_examples=60, deadline=None)
def test_auc_monotone_transform_invariance(pos, neg):
    # map each score to its rank in the pooled order: strictly increasing and
    # exact in float arithmetic, so the rank statistic must not move at all
    table = {v: i for i, v in enumerate(sorted(set(pos) | set(neg)))}

    def f(v):
        return [float(table[x] * 2 + 1) for x in v]

    assert roc_auc(pos, neg) == pytest.approx(roc_auc(f(pos), f(neg)), abs=1e-12)


def test_auc_complement_for_tie_free():
    rng = np.random.default_rng(7)
    pos = rng.standard_normal(20)
    neg = rng.standard_normal(25) + 0.001
    assert roc_auc(pos, neg) + roc_auc(neg, pos) == pytest.approx(1.0, abs=1e-12)


def test_auc_empty_rejected():
    with pytest.raises(ValueError):
        roc_auc([], [1.0])


# ---------------------------------------------------------------------------
# TPR @ FPR and calibration
# ---------------------------------------------------------------------------


def test_tpr_spec_oracle():
    neg = list(range(100))
    assert calibrate_threshold(neg, 0.05) == 95.0
    assert tpr_at_fpr([96, 94], neg, 0.05) == 0.5


def test_tpr_perfect_separation_any_fpr():
    for fpr in (0.01, 0.05, 0.3):
        assert tpr_at_fpr([10, 11], [1, 2, 3], fpr) == 1.0


def test_tpr_exchangeable_about_equals_fpr():
    neg = list(range(100))
    assert abs(tpr_at_fpr(neg, neg, 0.05) - 0.05) <= 1 / len(neg)


def test_tpr_matches_brute_force():
    rng = np.random.default_rng(321)
    for _ in range(300):
        pos = rng.integers(0, 20, rng.integers(1, 51)).astype(float)
        neg = rng.integers(0, 20, rng.integers(2, 51)).astype(float)
        fpr = float(rng.uniform(0.02, 0.5))
        assert tpr_at_fpr(pos, neg, fpr) == brute_tpr(pos, neg, fpr)


def test_tpr_monotone_in_fpr():
    rng = np.random.default_rng(11)
    pos = rng.standard_normal(40) + 1
    neg = rng.standard_normal(40)
    values = [tpr_at_fpr(pos, neg, f) for f in (0.01, 0.05, 0.1, 0.3, 0.6)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_calibrate_enumeration_oracle():
    neg = list(range(1000))
    t = calibrate_threshold(neg, 0.01)
    assert t == 990.0
    assert np.mean(np.asarray(neg) >= t) == 0.01


def test_calibrate_median_boundary():
    neg = [-3.0, -1.0, 1.0, 3.0]
    assert calibrate_threshold(neg, 0.5) == 1.0


def test_calibrate_requires_enough_negatives():
    with pytest.raises(ValueError, match="calibrate"):
        calibrate_threshold(list(range(50)), 0.01)


def test_calibrate_fpr_bound_holds():
    rng = np.random.default_rng(99)
    for _ in range(100):
        neg = rng.standard_normal(rng.integers(100, 400))
        t = calibrate_threshold(neg, 0.01)
        assert np.mean(neg >= t) <= 0.01


def test_fpr_range_validated():
    with pytest.raises(ValueError):
        tpr_at_fpr([1], [1, 2], 0.0)
    with pytest.raises(ValueError):
        tpr_at_fpr([1], [1, 2], 1.0)
