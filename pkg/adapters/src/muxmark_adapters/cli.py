"""Codec adapter executable.

Usage::

    muxmark-codec IN.wav OUT.wav --codec {encodec|dac|speechtokenizer} \
        [--setting N] [--engine auto|pretrained|reference]

Conforms to the benchmark's external-codec subprocess contract: reads a mono
16 kHz WAV, reconstructs it through the selected codec, writes a WAV of the
same duration, and exits 0. A manifest line (JSON) goes to stderr for report
provenance. Exit codes: 0 success, 1 bad input or processing failure, 3 when
``--engine pretrained`` is requested but the model/weights are unavailable.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
from scipy.io import wavfile

from . import engines

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_NO_MODEL = 3


def _read_wav_mono16k(path) -> np.ndarray:
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio")
    if rate != engines.SAMPLE_RATE:
        raise ValueError(f"{path}: expected {engines.SAMPLE_RATE} Hz, got {rate}")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.float32:
        return data.astype(np.float64)
    raise ValueError(f"{path}: unsupported encoding {data.dtype}")


def _write_wav(path, x: np.ndarray) -> None:
    wavfile.write(path, engines.SAMPLE_RATE,
                  np.clip(x, -1.0, 1.0).astype(np.float32))


def _fit(x: np.ndarray, n: int) -> np.ndarray:
    if x.size >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - x.size)])


def adapter_main(in_path, out_path, codec: str, setting: int | None,
                 engine: str) -> int:
    try:
        x = _read_wav_mono16k(in_path)
    except FileNotFoundError:
        print(f"muxmark-codec: input not found: {in_path}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:
        print(f"muxmark-codec: bad input: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    if setting is None:
        setting = engines.DEFAULT_SETTINGS[codec]

    used_engine = engine
    model_id = None
    try:
        if engine in ("auto", "pretrained"):
            try:
                y, model_id = engines.run_pretrained(codec, x, setting)
                used_engine = "pretrained"
            except engines.PretrainedUnavailable as exc:
                if engine == "pretrained":
                    print(
                        f"muxmark-codec: pretrained {codec} unavailable: {exc}\n"
                        f"hint: pip install 'muxmark-adapters[pretrained]' and "
                        f"download the {codec} weights (network required)",
                        file=sys.stderr,
                    )
                    return EXIT_NO_MODEL
                used_engine = "reference"
        if used_engine in ("auto", "reference"):
            y = engines.run_reference(codec, x, setting)
            used_engine = "reference"
            model_id = engines.reference_model_id(codec, setting)
        y = _fit(y, x.size)
        _write_wav(out_path, y)
    except Exception as exc:
        print(f"muxmark-codec: processing failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    manifest = {
        "codec": codec,
        "engine": used_engine,
        "model": model_id,
        "setting": setting,
        "version": __version__,
        "samples": int(x.size),
    }
    print(json.dumps(manifest, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="muxmark-codec",
        description="Neural-codec style reconstruction attacks over a WAV contract",
    )
    p.add_argument("in_path", help="input WAV (mono, 16 kHz)")
    p.add_argument("out_path", help="output WAV path")
    p.add_argument("--codec", choices=engines.CODECS, required=True)
    p.add_argument("--setting", type=int, default=None,
                   help="stages/bandwidth for encodec+dac, codebook bits for "
                        "speechtokenizer (defaults per codec)")
    p.add_argument("--engine", choices=("auto", "pretrained", "reference"),
                   default="auto",
                   help="auto tries pretrained weights, then the built-in "
                        "reference reconstruction")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return adapter_main(args.in_path, args.out_path, args.codec, args.setting,
                        args.engine)


if __name__ == "__main__":
    sys.exit(main())
