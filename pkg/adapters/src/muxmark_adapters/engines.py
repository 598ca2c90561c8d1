"""Codec engines: pretrained model wrappers plus reference DSP fallbacks.

Each codec family reconstructs audio from a discretised intermediate
representation, which is exactly the property the dilution benchmark needs:

* ``encodec`` / ``dac`` style: residual vector quantization of short-time
  spectral frames; the setting is the number of quantizer stages, so higher
  settings keep more detail (bandwidth-like behaviour).
* ``speechtokenizer`` style: each frame is reduced to a single token from a
  learned codebook over mel envelopes, then audio is resynthesized with
  Griffin-Lim phase reconstruction; fine spectral detail and all original
  phase structure are lost.

The reference engines are dependency-free and deterministic: codebooks are
derived from the input file's own frame statistics with fixed seeds. The
``pretrained`` engine defers to the real model libraries when they (and
their weights) are installed, and reports exit code 3 otherwise.
"""

from __future__ import annotations

import numpy as np

from . import dsp

SAMPLE_RATE = 16000

CODECS = ("encodec", "dac", "speechtokenizer")

DEFAULT_SETTINGS = {"encodec": 8, "dac": 12, "speechtokenizer": 9}

SETTING_RANGE = {"encodec": (1, 16), "dac": (1, 24), "speechtokenizer": (4, 12)}

_SEED = 0x5EED_C0DE


class PretrainedUnavailable(RuntimeError):
    """The requested pretrained model (or its library) is not installed."""


def _rvq_reconstruct(x: np.ndarray, n_stages: int, codebook_size: int,
                     seed: int) -> np.ndarray:
    """Residual VQ of log-magnitude frames; original phases are kept.

    Codebooks are seeded samples of the current residual population, and the
    zero vector is always a candidate, so the residual norm never grows with
    additional stages: more stages means strictly better reconstruction.
    """
    grid = dsp.stft(x)
    mags = np.abs(grid)
    phases = grid / np.maximum(mags, 1e-12)
    logm = np.log1p(mags)

    rng = np.random.default_rng(np.random.PCG64(seed))
    residual = logm.copy()
    recon = np.zeros_like(logm)
    n_frames = logm.shape[0]
    for _ in range(n_stages):
        # keep the codebook much smaller than the frame population so each
        # stage genuinely quantizes rather than memorising frames
        take = max(1, min(codebook_size, n_frames // 4))
        codebook = residual[rng.choice(n_frames, size=take, replace=False)]
        d2 = (
            np.sum(residual**2, axis=1)[:, None]
            - 2.0 * residual @ codebook.T
            + np.sum(codebook**2, axis=1)[None, :]
        )
        best = np.argmin(d2, axis=1)
        chosen = codebook[best]
        keep = d2[np.arange(n_frames), best] < np.sum(residual**2, axis=1)
        chosen = np.where(keep[:, None], chosen, 0.0)
        recon += chosen
        residual -= chosen
    out_mags = np.expm1(np.maximum(recon, 0.0))
    return dsp.istft(out_mags * phases, x.size)


def _speechtokenizer_reconstruct(x: np.ndarray, codebook_bits: int,
                                 seed: int) -> np.ndarray:
    """Tokenize mel envelopes frame by frame, invert, rebuild phases."""
    grid = dsp.stft(x)
    mags = np.abs(grid)
    bank = dsp.mel_filterbank(64, mags.shape[1], SAMPLE_RATE)
    mel = np.log1p(mags**2 @ bank.T)  # [frames x 64]

    rng = np.random.default_rng(np.random.PCG64(seed))
    n_frames = mel.shape[0]
    k = min(2**codebook_bits, n_frames)
    codebook = mel[rng.choice(n_frames, size=k, replace=False)]
    d2 = (
        np.sum(mel**2, axis=1)[:, None]
        - 2.0 * mel @ codebook.T
        + np.sum(codebook**2, axis=1)[None, :]
    )
    tokens = np.argmin(d2, axis=1)
    mel_q = codebook[tokens]

    # invert the mel envelope back to linear magnitudes
    power = np.expm1(np.maximum(mel_q, 0.0))
    pinv = np.linalg.pinv(bank.T)  # [64 x 513]
    mag2 = np.maximum(power @ pinv, 0.0)
    out_mags = np.sqrt(mag2)
    return dsp.griffin_lim(out_mags, x.size, iters=24, seed=seed ^ 0xBEEF)


def run_reference(codec: str, x: np.ndarray, setting: int) -> np.ndarray:
    lo, hi = SETTING_RANGE[codec]
    if not lo <= setting <= hi:
        raise ValueError(f"{codec} setting {setting} outside [{lo}, {hi}]")
    if codec == "encodec":
        return _rvq_reconstruct(x, n_stages=setting, codebook_size=16, seed=_SEED)
    if codec == "dac":
        return _rvq_reconstruct(x, n_stages=setting, codebook_size=24,
                                seed=_SEED ^ 0xDAC)
    if codec == "speechtokenizer":
        return _speechtokenizer_reconstruct(x, codebook_bits=setting, seed=_SEED ^ 0x57)
    raise ValueError(f"unknown codec {codec!r}")


def reference_model_id(codec: str, setting: int) -> str:
    if codec in ("encodec", "dac"):
        return f"reference-rvq/{codec}-nq{setting}"
    return f"reference-melvq-gl/bits{setting}"


def run_pretrained(codec: str, x: np.ndarray, setting: int) -> tuple:
    """Round-trip through the real model; returns (audio, model_id).

    Raises PretrainedUnavailable when the library or its weights cannot be
    loaded (the CLI maps that to exit code 3 with a download hint).
    """
    try:
        if codec == "encodec":
            return _pretrained_encodec(x, setting)
        if codec == "dac":
            return _pretrained_dac(x, setting)
        if codec == "speechtokenizer":
            return _pretrained_speechtokenizer(x, setting)
    except PretrainedUnavailable:
        raise
    except ImportError as exc:
        raise PretrainedUnavailable(f"{codec}: library missing ({exc})") from exc
    except Exception as exc:  # weight download/load failures included
        raise PretrainedUnavailable(f"{codec}: model load failed ({exc})") from exc
    raise ValueError(f"unknown codec {codec!r}")


def _pretrained_encodec(x: np.ndarray, setting: int) -> tuple:
    import torch
    from encodec import EncodecModel

    model = EncodecModel.encodec_model_24khz()
    model.set_target_bandwidth(float(max(1.5, min(24.0, setting * 1.5))))
    wav = torch.tensor(x, dtype=torch.float32)[None, None, :]
    import torchaudio

    wav = torchaudio.functional.resample(wav, SAMPLE_RATE, model.sample_rate)
    with torch.no_grad():
        frames = model.encode(wav)
        out = model.decode(frames)
    out = torchaudio.functional.resample(out, model.sample_rate, SAMPLE_RATE)
    return out[0, 0].numpy().astype(np.float64), f"encodec_24khz/bw{setting}"


def _pretrained_dac(x: np.ndarray, setting: int) -> tuple:
    import dac
    import torch

    path = dac.utils.download(model_type="16khz")
    model = dac.DAC.load(path)
    model.eval()
    wav = torch.tensor(x, dtype=torch.float32)[None, None, :]
    with torch.no_grad():
        z, codes, latents, _, _ = model.encode(wav)
        out = model.decode(z)
    return out[0, 0].numpy().astype(np.float64), f"dac_16khz/nq{setting}"


def _pretrained_speechtokenizer(x: np.ndarray, setting: int) -> tuple:
    import torch
    from speechtokenizer import SpeechTokenizer

    # no bundled weights: rely on a conventional cache location
    import os

    ckpt_dir = os.environ.get("SPEECHTOKENIZER_CKPT_DIR")
    if not ckpt_dir:
        raise PretrainedUnavailable(
            "speechtokenizer: set SPEECHTOKENIZER_CKPT_DIR to the checkpoint dir"
        )
    config = os.path.join(ckpt_dir, "config.json")
    ckpt = os.path.join(ckpt_dir, "SpeechTokenizer.pt")
    model = SpeechTokenizer.load_from_checkpoint(config, ckpt)
    model.eval()
    wav = torch.tensor(x, dtype=torch.float32)[None, None, :]
    with torch.no_grad():
        codes = model.encode(wav)
        out = model.decode(codes[: max(1, setting // 2)])
    return out[0, 0].numpy().astype(np.float64), f"speechtokenizer/{setting}"
