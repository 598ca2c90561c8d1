"""Dilution-attack battery: classical edits, temporal manipulations, and
subprocess-driven codecs.

Every built-in attack is a pure function of (signal, parameters, seed) and
preserves the input length; time stretching and external codecs are re-fit
by truncation or zero padding. Codecs (conventional or neural) run through
a command template with ``{in}``/``{out}`` WAV placeholders so the benchmark
stays free of codec dependencies.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from . import prng
from .audio import DEFAULT_STFT, AudioBuffer, StftConfig, _istft_array, load_wav, save_wav, stft

ATTACK_KINDS = (
    "gaussian_noise",
    "uniform_noise",
    "amplitude_scale",
    "zero_mask",
    "time_shift",
    "lowpass",
    "bandpass",
    "smoothing",
    "time_stretch",
    "echo",
    "crop_invert",
    "fft_mask",
    "rir",
    "external_codec",
)

# parameter names and admissible ranges per kind
_PARAM_SPECS = {
    "gaussian_noise": {"snr_db": (-20.0, 100.0)},
    "uniform_noise": {"snr_db": (-20.0, 100.0)},
    "amplitude_scale": {"gain": (0.0, 4.0)},
    "zero_mask": {"fraction": (0.0, 1.0)},
    "time_shift": {"max_shift_ms": (0.0, 500.0)},
    "lowpass": {"cutoff_hz": (50.0, 7999.0)},
    "bandpass": {"low_hz": (10.0, 7999.0), "high_hz": (20.0, 7999.0)},
    "smoothing": {"taps": (1, 63)},
    "time_stretch": {"rate": (0.8, 1.25)},
    "echo": {"delay_ms": (1.0, 1000.0), "gain": (0.0, 1.0)},
    "crop_invert": {"fraction": (0.0, 1.0)},
    "fft_mask": {"fraction": (0.0, 1.0)},
    "rir": {"rt60_ms": (50.0, 2000.0), "drr_db": (-30.0, 30.0)},
    "external_codec": {},
}


class AttackError(ValueError):
    """Raised on malformed attack specifications or parameters."""


class CodecRunError(RuntimeError):
    """External codec run failed; carries the command and captured stderr."""

    def __init__(self, message: str, command: str = "", returncode: int | None = None,
                 stderr: str = ""):
        super().__init__(message)
        self.command = command
        self.returncode = returncode
        self.stderr = stderr


@dataclass(frozen=True)
class AttackSpec:
    """One attack: a kind plus its complete parameter map."""

    kind: str
    params: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}")
        spec = _PARAM_SPECS[self.kind]
        if self.kind != "external_codec":
            for pname, (lo, hi) in spec.items():
                if pname not in self.params:
                    raise AttackError(f"{self.kind}: missing parameter {pname!r}")
                v = self.params[pname]
                if not (isinstance(v, (int, float)) and lo <= v <= hi):
                    raise AttackError(
                        f"{self.kind}: parameter {pname}={v!r} outside [{lo}, {hi}]"
                    )
            unknown = set(self.params) - set(spec)
            if unknown:
                raise AttackError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        else:
            if "command" not in self.params or not isinstance(
                self.params["command"], CodecCommand
            ):
                raise AttackError("external_codec requires a 'command' CodecCommand")
        if not self.name:
            object.__setattr__(self, "name", self.kind)


@dataclass(frozen=True)
class CodecCommand:
    """Shell template with {in} and {out} WAV-path placeholders."""

    template: str
    name: str

    def __post_init__(self):
        if "{in}" not in self.template or "{out}" not in self.template:
            raise AttackError("codec template must contain {in} and {out}")

    def render(self, in_path, out_path) -> str:
        return self.template.replace("{in}", shlex.quote(str(in_path))).replace(
            "{out}", shlex.quote(str(out_path))
        )


def _attack_rng(kind: str, seed: int) -> np.random.Generator:
    tag = int.from_bytes(kind.encode()[:8].ljust(8, b"\0"), "little")
    return np.random.default_rng(np.random.PCG64(prng.derive(seed, tag)))


def _fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    if samples.size >= n:
        return samples[:n]
    out = np.zeros(n)
    out[: samples.size] = samples
    return out


def _scaled_noise(x: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    # normalise so the realised SNR is exact, not just exact in expectation
    target = np.sqrt(np.sum(x**2)) * 10.0 ** (-snr_db / 20.0)
    norm = np.sqrt(np.sum(noise**2))
    return x + noise * (target / max(norm, 1e-30))


def gaussian_noise(x: AudioBuffer, snr_db: float, seed: int) -> AudioBuffer:
    rng = _attack_rng("gaussian_noise", seed)
    noise = rng.standard_normal(len(x))
    return x.replace_samples(_scaled_noise(x.samples, noise, snr_db))


def uniform_noise(x: AudioBuffer, snr_db: float, seed: int) -> AudioBuffer:
    rng = _attack_rng("uniform_noise", seed)
    noise = rng.uniform(-1.0, 1.0, len(x))
    return x.replace_samples(_scaled_noise(x.samples, noise, snr_db))


def amplitude_scale(x: AudioBuffer, gain: float) -> AudioBuffer:
    if gain == 1.0:
        return x
    return x.replace_samples(x.samples * gain)


def zero_mask(x: AudioBuffer, fraction: float, seed: int) -> AudioBuffer:
    n = len(x)
    k = int(math.floor(fraction * n))
    if k == 0:
        return x
    rng = _attack_rng("zero_mask", seed)
    start = int(rng.integers(0, n - k + 1))
    out = x.samples.copy()
    out[start : start + k] = 0.0
    return x.replace_samples(out)


def time_shift(x: AudioBuffer, max_shift_ms: float, seed: int) -> AudioBuffer:
    max_d = int(round(max_shift_ms * x.sample_rate / 1000.0))
    if max_d == 0:
        return x
    rng = _attack_rng("time_shift", seed)
    d = int(rng.integers(-max_d, max_d + 1))
    out = np.zeros(len(x))
    if d >= 0:
        out[d:] = x.samples[: len(x) - d]
    else:
        out[:d] = x.samples[-d:]
    return x.replace_samples(out)


def lowpass(x: AudioBuffer, cutoff_hz: float) -> AudioBuffer:
    sos = sps.butter(4, cutoff_hz, btype="lowpass", fs=x.sample_rate, output="sos")
    return x.replace_samples(sps.sosfilt(sos, x.samples))


def bandpass(x: AudioBuffer, low_hz: float, high_hz: float) -> AudioBuffer:
    if low_hz >= high_hz:
        raise AttackError("bandpass needs low_hz < high_hz")
    sos = sps.butter(4, [low_hz, high_hz], btype="bandpass", fs=x.sample_rate, output="sos")
    return x.replace_samples(sps.sosfilt(sos, x.samples))


def smoothing(x: AudioBuffer, taps: int = 5) -> AudioBuffer:
    kernel = np.full(int(taps), 1.0 / int(taps))
    return x.replace_samples(_fit_length(np.convolve(x.samples, kernel), len(x)))


def echo(x: AudioBuffer, delay_ms: float, gain: float) -> AudioBuffer:
    """y[n] = x[n] + gain * x[n - d]."""
    d = int(round(delay_ms * x.sample_rate / 1000.0))
    out = x.samples.copy()
    if gain != 0.0 and d < len(x):
        out[d:] += gain * x.samples[: len(x) - d]
    return x.replace_samples(out)


def crop_invert(x: AudioBuffer, fraction: float, seed: int) -> AudioBuffer:
    """Invert the sign of one seeded contiguous segment."""
    n = len(x)
    k = int(math.floor(fraction * n))
    if k == 0:
        return x
    rng = _attack_rng("crop_invert", seed)
    start = int(rng.integers(0, n - k + 1))
    out = x.samples.copy()
    out[start : start + k] *= -1.0
    return x.replace_samples(out)


def fft_mask(
    x: AudioBuffer, fraction: float, seed: int, cfg: StftConfig = DEFAULT_STFT
) -> AudioBuffer:
    """Zero a seeded random subset of STFT cells and resynthesize.

    Cells are masked in overlapping frame pairs; zeroing a bin in only one
    of two 50%-overlapped frames would let the other frame half-restore it,
    making the energy removed overshoot the requested cell fraction.
    """
    spec = stft(x, cfg)
    grid = spec.grid.copy()
    if fraction > 0.0:
        n_frames, n_bins = grid.shape
        n_pairs = (n_frames + 1) // 2
        k = int(round(fraction * n_pairs * n_bins))
        rng = _attack_rng("fft_mask", seed)
        idx = rng.choice(n_pairs * n_bins, size=k, replace=False)
        pair, b = idx // n_bins, idx % n_bins
        grid[2 * pair, b] = 0.0
        odd = 2 * pair + 1 < n_frames
        grid[2 * pair[odd] + 1, b[odd]] = 0.0
    return x.replace_samples(_istft_array(grid, cfg, len(x)))


def time_stretch(
    x: AudioBuffer, rate: float, cfg: StftConfig = DEFAULT_STFT
) -> AudioBuffer:
    """Phase-vocoder stretch by ``rate`` (>1 speeds up), re-fit to len(x).

    Standard vocoder: magnitudes are linearly interpolated along the frame
    axis and phases accumulate the per-bin expected advance plus the
    wrapped instantaneous deviation.
    """
    if not 0.8 <= rate <= 1.25:
        raise AttackError(f"stretch rate {rate} outside supported [0.8, 1.25]")
    spec = stft(x, cfg)
    n_frames, n_bins = spec.grid.shape
    # duplicate the last frame so fractional positions can reach it
    mags = np.vstack([np.abs(spec.grid), np.abs(spec.grid[-1:])])
    phases = np.vstack([np.angle(spec.grid), np.angle(spec.grid[-1:])])

    positions = np.arange(0.0, n_frames, rate)
    omega = 2.0 * np.pi * np.arange(n_bins) * cfg.hop / cfg.frame_len

    out = np.empty((positions.size, n_bins), dtype=np.complex128)
    acc = phases[0].copy()
    for j, pos in enumerate(positions):
        base = int(math.floor(pos))
        frac = pos - base
        mag = (1.0 - frac) * mags[base] + frac * mags[base + 1]
        out[j] = mag * np.exp(1j * acc)
        dphi = phases[base + 1] - phases[base] - omega
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        acc = acc + omega + dphi

    out_len = (positions.size - 1) * cfg.hop + cfg.frame_len - 2 * cfg.hop
    stretched = _istft_array(out, cfg, max(out_len, 1))
    return x.replace_samples(_fit_length(stretched, len(x)))


# tail gain giving a 0 dB direct-to-reverberant ratio at the 200 ms reference
_RIR_REF_RT60_MS = 200.0


def synth_rir(
    rt60_ms: float, seed: int, sample_rate: int, drr_db: float = 0.0
) -> AudioBuffer:
    """Synthetic impulse response: unit direct path plus decaying noise tail.

    The tail is exponentially decaying seeded noise reaching -60 dB at rt60.
    Its gain is a fixed constant (0 dB direct-to-reverberant at the 200 ms
    reference, shifted by ``drr_db``), so longer rt60 means more total
    reverberant energy and a lower direct-to-reverberant ratio.
    """
    rt60 = rt60_ms / 1000.0
    n = max(2, int(rt60 * sample_rate))
    rng = _attack_rng("rir", seed)
    decay = np.exp(-6.9077 * np.arange(n) / (rt60 * sample_rate))
    tail = rng.standard_normal(n) * decay
    tail[0] = 0.0
    ref_energy = _RIR_REF_RT60_MS / 1000.0 * sample_rate / (2.0 * 6.9077)
    tail *= 10.0 ** (-drr_db / 20.0) / math.sqrt(ref_energy)
    h = tail
    h[0] = 1.0
    return AudioBuffer(h, sample_rate)


def rir_convolve(x: AudioBuffer, rir=None, rt60_ms: float = 200.0, seed: int = 0,
                 drr_db: float = 0.0) -> AudioBuffer:
    """Convolve with a measured or synthetic RIR; peak-normalised to the input."""
    if rir is None:
        rir = synth_rir(rt60_ms, seed, x.sample_rate, drr_db)
    if rir.sample_rate != x.sample_rate:
        raise AttackError("RIR sample rate mismatch")
    y = sps.fftconvolve(x.samples, rir.samples)[: len(x)]
    peak_in = float(np.max(np.abs(x.samples)))
    peak_out = float(np.max(np.abs(y)))
    if peak_out > 0 and peak_in > 0:
        y *= peak_in / peak_out
    return x.replace_samples(y)


def external_codec_attack(
    x: AudioBuffer,
    cmd: CodecCommand,
    workdir=None,
    timeout: float = 120.0,
) -> AudioBuffer:
    """Round-trip the signal through an external codec subprocess.

    Writes a PCM16 WAV, renders and runs the command template (exit 0 means
    success), reads the output WAV back, and re-fits the length. Failures
    raise CodecRunError with the captured diagnostics.
    """
    with tempfile.TemporaryDirectory(dir=workdir, prefix="codec_") as td:
        in_path = Path(td) / "in.wav"
        out_path = Path(td) / "out.wav"
        save_wav(x, in_path, encoding="pcm16")
        command = cmd.render(in_path, out_path)
        try:
            proc = subprocess.run(
                command,
                shell=True,
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise CodecRunError(
                f"codec {cmd.name!r} timed out after {timeout}s",
                command=command,
                stderr=str(exc.stderr or "")[-2000:],
            ) from exc
        if proc.returncode != 0:
            raise CodecRunError(
                f"codec {cmd.name!r} exited {proc.returncode}",
                command=command,
                returncode=proc.returncode,
                stderr=(proc.stderr or "")[-2000:],
            )
        if not out_path.exists():
            raise CodecRunError(
                f"codec {cmd.name!r} produced no output file",
                command=command,
                returncode=proc.returncode,
                stderr=(proc.stderr or "")[-2000:],
            )
        try:
            decoded = load_wav(out_path)
        except Exception as exc:
            raise CodecRunError(
                f"codec {cmd.name!r} output unreadable: {exc}",
                command=command,
                stderr=(proc.stderr or "")[-2000:],
            ) from exc
        if decoded.sample_rate != x.sample_rate:
            raise CodecRunError(
                f"codec {cmd.name!r} changed the sample rate "
                f"({decoded.sample_rate} != {x.sample_rate})",
                command=command,
            )
    return x.replace_samples(_fit_length(decoded.samples, len(x)))


def attack_apply(x: AudioBuffer, spec: AttackSpec, seed: int) -> AudioBuffer:
    """Apply one attack; deterministic in (x, spec, seed), length-preserving."""
    p = spec.params
    if spec.kind == "gaussian_noise":
        return gaussian_noise(x, p["snr_db"], seed)
    if spec.kind == "uniform_noise":
        return uniform_noise(x, p["snr_db"], seed)
    if spec.kind == "amplitude_scale":
        return amplitude_scale(x, p["gain"])
    if spec.kind == "zero_mask":
        return zero_mask(x, p["fraction"], seed)
    if spec.kind == "time_shift":
        return time_shift(x, p["max_shift_ms"], seed)
    if spec.kind == "lowpass":
        return lowpass(x, p["cutoff_hz"])
    if spec.kind == "bandpass":
        return bandpass(x, p["low_hz"], p["high_hz"])
    if spec.kind == "smoothing":
        return smoothing(x, int(p["taps"]))
    if spec.kind == "time_stretch":
        return time_stretch(x, p["rate"])
    if spec.kind == "echo":
        return echo(x, p["delay_ms"], p["gain"])
    if spec.kind == "crop_invert":
        return crop_invert(x, p["fraction"], seed)
    if spec.kind == "fft_mask":
        return fft_mask(x, p["fraction"], seed)
    if spec.kind == "rir":
        return rir_convolve(x, rt60_ms=p["rt60_ms"], seed=seed, drr_db=p.get("drr_db", 0.0))
    if spec.kind == "external_codec":
        return external_codec_attack(x, p["command"], workdir=p.get("workdir"))
    raise AttackError(f"unhandled attack kind {spec.kind!r}")


def default_attack_battery(include_identity: bool = True) -> list:
    """The default dilution battery (identity row plus the built-in edits).

    Conventional and neural codec rows are added by the benchmark when codec
    commands are configured; they are external processes by design.
    """
    battery = []
    if include_identity:
        battery.append(AttackSpec("amplitude_scale", {"gain": 1.0}, name="identity"))
    battery += [
        AttackSpec("gaussian_noise", {"snr_db": 20.0}, name="gaussian_noise_20db"),
        AttackSpec("uniform_noise", {"snr_db": 20.0}, name="uniform_noise_20db"),
        AttackSpec("zero_mask", {"fraction": 0.1}, name="zero_mask_10"),
        AttackSpec("fft_mask", {"fraction": 0.1}, name="fft_mask_10"),
        AttackSpec("echo", {"delay_ms": 100.0, "gain": 0.3}, name="echo_100ms"),
        AttackSpec("rir", {"rt60_ms": 200.0, "drr_db": 0.0}, name="rir_200ms"),
    ]
    return battery
