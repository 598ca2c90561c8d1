import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from muxmark.audio import AudioBuffer, DEFAULT_STFT, stft, synth_speech_like
from muxmark.backends import (
    DetectionScore,
    Payload,
    WatermarkKey,
    detect,
    embed,
    phase_detect,
    phase_embed,
    qim_detect,
    qim_embed,
    ss_capacity_bits,
    ss_carrier,
    ss_detect,
    ss_embed,
)

from conftest import snr_of


def _clip_add(x: AudioBuffer, delta: np.ndarray) -> AudioBuffer:
    return AudioBuffer(np.clip(x.samples + delta, -1, 1), x.sample_rate)


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


def test_payload_validation():
    with pytest.raises(ValueError):
        Payload(())
    with pytest.raises(ValueError):
        Payload(tuple([0] * 65))
    with pytest.raises(ValueError):
        Payload((0, 2))
    assert len(Payload.random(1).bits) == 16


def test_key_validation():
    with pytest.raises(ValueError):
        WatermarkKey(1, "nope")
    with pytest.raises(ValueError):
        WatermarkKey(2**64, "ss")


def test_detection_score_finite():
    with pytest.raises(ValueError):
        DetectionScore(raw=math.nan, z=0.0, logit=0.0)


# ---------------------------------------------------------------------------
# spread spectrum
# ---------------------------------------------------------------------------


def test_ss_rejects_alpha_zero(host3s):
    with pytest.raises(ValueError):
        ss_embed(host3s, Payload.random(1), WatermarkKey(1, "ss"), alpha=0.0)


def test_ss_linear_in_alpha(host3s):
    key, pay = WatermarkKey(5, "ss"), Payload.random(5)
    d1 = ss_embed(host3s, pay, key, alpha=0.01)
    d2 = ss_embed(host3s, pay, key, alpha=0.02)
    assert np.allclose(d2.delta, 2.0 * d1.delta)
    assert np.isclose(np.linalg.norm(d2.delta), 2.0 * np.linalg.norm(d1.delta))


def test_ss_zero_host_norm():
    # delta is the scaled carrier itself: ||delta|| = alpha * sqrt(sum(PN^2))
    zeros = AudioBuffer(np.zeros(16000))
    key, pay = WatermarkKey(6, "ss"), Payload.random(6)
    d = ss_embed(zeros, pay, key, alpha=0.02)
    carrier = ss_carrier(key, pay, 16000, 16000)
    assert np.isclose(np.linalg.norm(d.delta), 0.02 * np.sqrt(np.sum(carrier**2)))


def test_ss_payload_capacity():
    x = AudioBuffer(np.zeros(4000))
    with pytest.raises(ValueError, match="capacity"):
        ss_embed(x, Payload.random(1, 16), WatermarkKey(1, "ss"))
    assert ss_capacity_bits(16000) == 16


def test_ss_round_trip_100_keys():
    # BER 0 at the default ~20 dB embedding over 100 random keys
    bit_errors = 0
    for i in range(100):
        x = synth_speech_like(3.0, seed=4000 + i)
        key = WatermarkKey(10_000 + i, "ss")
        pay = Payload.random(200 + i)
        y = _clip_add(x, ss_embed(x, pay, key).delta)
        score = ss_detect(y, key)
        assert score.z > 6.0
        bit_errors += sum(a != b for a, b in zip(score.bits, pay.bits))
    assert bit_errors == 0


def test_ss_clean_z_on_1s_speech_noise():
    # 1 s speech-shaped noise at 20 dB embedding: z clears 6
    for i in range(5):
        x = synth_speech_like(1.0, seed=4200 + i)
        key = WatermarkKey(50 + i, "ss")
        y = _clip_add(x, ss_embed(x, Payload.random(i), key).delta)
        assert ss_detect(y, key).z > 6.0


def test_ss_null_wrong_key_1000_trials():
    # uncorrelated noise, wrong key: E[z] ~ 0 and |z| < 4 in >= 99% of trials
    rng = np.random.default_rng(77)
    zs = []
    for i in range(1000):
        y = AudioBuffer(rng.standard_normal(16000) * 0.1)
        zs.append(ss_detect(y, WatermarkKey(900_000 + i, "ss")).z)
    zs = np.array(zs)
    assert abs(zs.mean()) < 0.3
    assert np.mean(np.abs(zs) < 4.0) >= 0.99


def test_ss_unwatermarked_median_1000_hosts():
    zs = []
    for i in range(1000):
        x = synth_speech_like(1.0, seed=5000 + i)
        zs.append(ss_detect(x, WatermarkKey(123, "ss")).z)
    assert abs(float(np.median(zs))) < 0.5


def test_ss_rejects_short_signal():
    with pytest.raises(ValueError, match="chip"):
        ss_detect(AudioBuffer(np.zeros(500)), WatermarkKey(1, "ss"))


def test_ss_survives_time_shift(host3s):
    key, pay = WatermarkKey(61, "ss"), Payload.random(61)
    y = _clip_add(host3s, ss_embed(host3s, pay, key).delta)
    shifted = np.zeros(len(y))
    shifted[640:] = y.samples[:-640]  # 40 ms
    assert ss_detect(AudioBuffer(shifted), key).z > 6.0


# ---------------------------------------------------------------------------
# QIM
# ---------------------------------------------------------------------------


def test_qim_rejects_bad_step(host3s):
    with pytest.raises(ValueError):
        qim_embed(host3s, Payload.random(1), WatermarkKey(1, "qim"), delta_step=0.0)


def test_qim_idempotent_reembedding(host3s):
    key, pay = WatermarkKey(70, "qim"), Payload.random(70)
    y = _clip_add(host3s, qim_embed(host3s, pay, key).delta)
    d2 = qim_embed(y, pay, key)
    assert np.linalg.norm(d2.delta) / np.linalg.norm(y.samples) < 1e-3


def test_qim_round_trip_100_trials():
    bit_errors = 0
    for i in range(100):
        x = synth_speech_like(2.0, seed=6000 + i)
        key = WatermarkKey(20_000 + i, "qim")
        pay = Payload.random(300 + i)
        y = _clip_add(x, qim_embed(x, pay, key).delta)
        score = qim_detect(y, key)
        assert score.raw > 0.4  # match fraction > 0.9
        bit_errors += sum(a != b for a, b in zip(score.bits, pay.bits))
    assert bit_errors == 0


def test_qim_step_to_zero_shrinks_delta(host3s):
    key, pay = WatermarkKey(71, "qim"), Payload.random(71)
    norms = [
        np.linalg.norm(qim_embed(host3s, pay, key, delta_step=s).delta)
        for s in (0.6, 0.3, 0.15, 0.075)
    ]
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_qim_null_match_fraction():
    # unwatermarked noise: match fraction ~ 0.5 within a binomial interval
    rng = np.random.default_rng(78)
    raws, zs = [], []
    for i in range(200):
        y = AudioBuffer(rng.standard_normal(16000) * 0.1)
        s = qim_detect(y, WatermarkKey(800_000 + i, "qim"))
        raws.append(s.raw)
        zs.append(s.z)
    assert abs(float(np.mean(raws))) < 0.02
    assert abs(float(np.mean(zs))) < 0.3


def test_qim_gain_sensitivity(host3s):
    # scaling the signal pushes the match fraction from ~1.0 back toward
    # chance; the exact trajectory can overshoot below 0.5 (lattice aliasing)
    key, pay = WatermarkKey(72, "qim"), Payload.random(72)
    y = _clip_add(host3s, qim_embed(host3s, pay, key).delta)
    fracs = []
    for gain in (1.0, 1.15, 2.0):
        s = qim_detect(AudioBuffer(y.samples * gain), key)
        fracs.append(s.raw + 0.5)
    assert fracs[0] > 0.95
    for f in fracs[1:]:
        assert f < 0.9
        assert abs(f - 0.5) < 0.12


def test_qim_rejects_short_signal():
    with pytest.raises(Exception):
        qim_detect(AudioBuffer(np.zeros(800)), WatermarkKey(1, "qim"))


# ---------------------------------------------------------------------------
# phase
# ---------------------------------------------------------------------------


def test_phase_theta_validation(host3s):
    key, pay = WatermarkKey(80, "phase"), Payload.random(80)
    with pytest.raises(ValueError):
        phase_embed(host3s, pay, key, theta=0.0)
    with pytest.raises(ValueError):
        phase_embed(host3s, pay, key, theta=1.0)


def test_phase_minimal_theta_transparency():
    x = synth_speech_like(3.0, seed=7000)
    key, pay = WatermarkKey(81, "phase"), Payload.random(81)
    y = _clip_add(x, phase_embed(x, pay, key, theta=0.01).delta)
    assert snr_of(x, y) > 40.0


def test_phase_round_trip_theta_03(host3s):
    key, pay = WatermarkKey(82, "phase"), Payload.random(82)
    y = _clip_add(host3s, phase_embed(host3s, pay, key, theta=0.3).delta)
    score = phase_detect(y, key, theta=0.3)
    assert score.bits == pay.bits
    assert score.z > 6.0


def test_phase_preserves_magnitudes(host3s):
    # per modified frame, relative magnitude change stays under 5%
    key, pay = WatermarkKey(83, "phase"), Payload.random(83)
    delta = phase_embed(host3s, pay, key)
    sx = stft(host3s).grid
    sy = stft(_clip_add(host3s, delta.delta)).grid
    from muxmark.backends import _writable_even_frames

    frames = _writable_even_frames(sx.shape[0], len(host3s), DEFAULT_STFT)
    for t in frames:
        mx, my = np.abs(sx[t]), np.abs(sy[t])
        assert np.linalg.norm(my - mx) / np.linalg.norm(mx) < 0.05


def test_phase_null_wrong_key():
    rng = np.random.default_rng(79)
    zs = []
    for i in range(300):
        y = AudioBuffer(rng.standard_normal(16000) * 0.1)
        zs.append(phase_detect(y, WatermarkKey(700_000 + i, "phase")).z)
    zs = np.array(zs)
    assert abs(zs.mean()) < 0.3
    assert np.mean(np.abs(zs) < 4.0) >= 0.99


def test_phase_unwatermarked_median():
    zs = []
    for i in range(400):
        x = synth_speech_like(1.0, seed=8000 + i)
        zs.append(phase_detect(x, WatermarkKey(321, "phase")).z)
    assert abs(float(np.median(zs))) < 0.5


def test_phase_clean_z_high(host3s):
    key, pay = WatermarkKey(84, "phase"), Payload.random(84)
    y = _clip_add(host3s, phase_embed(host3s, pay, key).delta)
    assert phase_detect(y, key).z > 10.0


def test_phase_rejects_short_signal():
    with pytest.raises(Exception):
        phase_detect(AudioBuffer(np.zeros(800)), WatermarkKey(1, "phase"))


# ---------------------------------------------------------------------------
# cross-backend invariants
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("backend", ["ss", "qim", "phase"])
def test_determinism(backend, host3s):
    key, pay = WatermarkKey(90, backend), Payload.random(90)
    d1 = embed(backend, host3s, pay, key)
    d2 = embed(backend, host3s, pay, key)
    assert np.array_equal(d1.delta, d2.delta)


@pytest.mark.parametrize("backend", ["ss", "qim", "phase"])
def test_key_isolation_ks(backend):
    """z on a watermarked signal with an independent key is distributionally
    indistinguishable from the clean-signal null (KS p > 0.01, 1000 trials)."""
    x = synth_speech_like(1.0, seed=9100)
    key, pay = WatermarkKey(91, backend), Payload.random(91)
    y = _clip_add(x, embed(backend, x, pay, key).delta)
    z_marked, z_clean = [], []
    for i in range(1000):
        wrong = WatermarkKey(1_000_000 + i, backend)
        z_marked.append(detect(backend, y, wrong).z)
        z_clean.append(detect(backend, x, wrong).z)
    assert ks_2samp(z_marked, z_clean).pvalue > 0.01


@pytest.mark.parametrize(
    "backend,strengths",
    [
        ("ss", [0.002, 0.005, 0.01, 0.02]),
        ("qim", [0.08, 0.2, 0.6, 1.2]),
        ("phase", [0.05, 0.1, 0.2, 0.3]),
    ],
)
def test_strength_monotone_z(backend, strengths, hosts):
    means = []
    for s in strengths:
        zs = []
        for j, x in enumerate(hosts):
            key, pay = WatermarkKey(95 + j, backend), Payload.random(95 + j)
            y = _clip_add(x, embed(backend, x, pay, key, s).delta)
            zs.append(detect(backend, y, key, s).z)
        means.append(float(np.mean(zs)))
    assert all(b >= a - 1e-9 for a, b in zip(means, means[1:]))


@pytest.mark.parametrize("backend", ["ss", "qim", "phase"])
def test_logit_equals_z(backend, host3s):
    key, pay = WatermarkKey(96, backend), Payload.random(96)
    y = _clip_add(host3s, embed(backend, host3s, pay, key).delta)
    s = detect(backend, y, key)
    assert s.logit == s.z
