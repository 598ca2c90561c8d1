import json
import subprocess
import sys

import numpy as np
import pytest

from muxmark.audio import load_wav, save_wav, synth_speech_like
from muxmark.backends import WatermarkKey, ss_detect
from muxmark.bench import make_synthetic_corpus


def run_cli(args, **kwargs):
    return subprocess.run(
        [sys.executable, "-m", "muxmark.cli", *args],
        capture_output=True, text=True, **kwargs,
    )


@pytest.fixture(scope="module")
def wav_in(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "host.wav"
    save_wav(synth_speech_like(3.0, seed=77), path)
    return path


def _stdout_json(proc):
    lines = [l for l in proc.stdout.splitlines() if l.strip()]
    assert len(lines) == 1, f"expected one stdout line, got {proc.stdout!r}"
    return json.loads(lines[0])


# ---------------------------------------------------------------------------
# embed
# ---------------------------------------------------------------------------


def test_embed_patfm_two_backends(wav_in, tmp_path):
    out = tmp_path / "wm.wav"
    proc = run_cli([
        "embed", "--in", str(wav_in), "--out", str(out),
        "--mode", "patfm", "--keys", "ss=11,phase=22",
    ])
    assert proc.returncode == 0, proc.stderr
    info = _stdout_json(proc)
    assert out.exists()
    assert isinstance(info["snr_db"], float) and info["snr_db"] > 10


def test_embed_missing_infile_flag_exits_2(tmp_path):
    proc = run_cli(["embed", "--out", str(tmp_path / "x.wav"), "--keys", "ss=1"])
    assert proc.returncode == 2
    assert "usage" in proc.stderr.lower()


def test_embed_alpha_zero_identity(wav_in, tmp_path):
    out = tmp_path / "same.wav"
    proc = run_cli([
        "embed", "--in", str(wav_in), "--out", str(out),
        "--mode", "parallel", "--keys", "ss=1,qim=2,phase=3", "--alpha", "0",
    ])
    assert proc.returncode == 0, proc.stderr
    assert _stdout_json(proc)["snr_db"] == "inf"
    assert np.array_equal(load_wav(out).samples.astype(np.float32),
                          load_wav(wav_in).samples.astype(np.float32))


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------


def test_detect_round_trip_above_threshold(wav_in, tmp_path):
    from muxmark.metrics import calibrate_threshold

    out = tmp_path / "marked.wav"
    run_cli([
        "embed", "--in", str(wav_in), "--out", str(out),
        "--mode", "parallel", "--keys", "ss=5,qim=6,phase=7",
    ])
    proc = run_cli(["detect", "--in", str(out), "--keys", "ss=5,qim=6,phase=7"])
    assert proc.returncode == 0, proc.stderr
    result = _stdout_json(proc)

    # calibrate a decision threshold from clean-file scores with these keys
    neg = []
    for i in range(25):
        clean = tmp_path / f"clean_{i}.wav"
        save_wav(synth_speech_like(2.0, seed=600 + i), clean)
        p = run_cli(["detect", "--in", str(clean), "--keys", "ss=5,qim=6,phase=7"])
        neg.append(_stdout_json(p)["fused_logit"])
    threshold = calibrate_threshold(neg, 0.05)
    assert result["fused_logit"] > threshold


def test_detect_wrong_keys_near_zero(wav_in, tmp_path):
    out = tmp_path / "marked2.wav"
    run_cli([
        "embed", "--in", str(wav_in), "--out", str(out),
        "--mode", "parallel", "--keys", "ss=5,qim=6,phase=7",
    ])
    proc = run_cli(["detect", "--in", str(out), "--keys", "ss=50,qim=60,phase=70"])
    assert abs(_stdout_json(proc)["fused_logit"]) < 3.0


def test_detect_malformed_wav_exits_1(tmp_path):
    bad = tmp_path / "junk.wav"
    bad.write_bytes(b"not a riff file")
    proc = run_cli(["detect", "--in", str(bad), "--keys", "ss=1"])
    assert proc.returncode == 1
    assert proc.stderr.strip()


def test_detect_matches_library(wav_in, tmp_path):
    out = tmp_path / "marked3.wav"
    run_cli(["embed", "--in", str(wav_in), "--out", str(out),
             "--mode", "single_ss", "--keys", "ss=99"])
    proc = run_cli(["detect", "--in", str(out), "--keys", "ss=99"])
    cli_z = _stdout_json(proc)["detectors"]["ss"]["z"]
    lib_z = ss_detect(load_wav(out), WatermarkKey(99, "ss")).z
    assert cli_z == pytest.approx(lib_z, abs=1e-9)


# ---------------------------------------------------------------------------
# attack / bench / sweep / case
# ---------------------------------------------------------------------------


def test_attack_identity_kind(wav_in, tmp_path):
    out = tmp_path / "att.wav"
    proc = run_cli([
        "attack", "--in", str(wav_in), "--out", str(out),
        "--kind", "amplitude_scale", "--params", "gain=1.0",
        "--encoding", "pcm16",
    ])
    assert proc.returncode == 0, proc.stderr
    assert np.max(np.abs(load_wav(out).samples - load_wav(wav_in).samples)) <= 1 / 32768


def test_attack_unknown_kind_exits_2(wav_in, tmp_path):
    proc = run_cli(["attack", "--in", str(wav_in), "--out", str(tmp_path / "x.wav"),
                    "--kind", "sharknado"])
    assert proc.returncode == 2


def test_bench_tiny_config(tmp_path):
    corpus = tmp_path / "corpus"
    make_synthetic_corpus(corpus, count=2, duration=2.0, seed=5)
    cfg = tmp_path / "bench.cfg"
    cfg.write_text(
        f"dataset.dir = {corpus}\n"
        f"dataset.cap = 2\n"
        "modes = single_ss\n"
        "attack.identity.kind = amplitude_scale\n"
        "attack.identity.gain = 1.0\n"
        f"output.dir = {tmp_path / 'out'}\n"
    )
    proc = run_cli(["bench", "--config", str(cfg)])
    assert proc.returncode == 0, proc.stderr
    info = _stdout_json(proc)
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["meta"]["config_hash"] == info["config_hash"]
    assert (tmp_path / "out" / "table_attacks.csv").exists()


def test_bench_without_config_exits_1(tmp_path):
    proc = run_cli(["bench"], env={"PATH": "/usr/bin:/bin"})
    assert proc.returncode == 1


def test_sweep_unknown_attack_exits_2(tmp_path):
    proc = run_cli(["sweep", "--config", "/dev/null", "--attack", "nonsense",
                    "--strengths", "1"])
    assert proc.returncode == 2


def test_case_dump(wav_in, tmp_path):
    out_dir = tmp_path / "case"
    proc = run_cli([
        "case", "--in", str(wav_in), "--keys", "ss=1,qim=2,phase=3",
        "--mode", "parallel", "--kind", "gaussian_noise", "--params", "snr_db=20",
        "--out-dir", str(out_dir),
    ])
    assert proc.returncode == 0, proc.stderr
    names = {f.name for f in out_dir.iterdir()}
    assert {"original.txt", "watermarked.txt", "difference.txt",
            "attacked.txt", "attacked_difference.txt", "meta.json"} <= names


def test_help_on_every_subcommand():
    for sub in ("embed", "detect", "attack", "bench", "sweep", "case"):
        proc = run_cli([sub, "--help"])
        assert proc.returncode == 0
        assert "usage" in proc.stdout.lower()


def test_unknown_flag_rejected(wav_in):
    proc = run_cli(["detect", "--in", str(wav_in), "--keys", "ss=1", "--bogus"])
    assert proc.returncode == 2
