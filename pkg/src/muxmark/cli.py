"""Command-line front end: embed, detect, attack, bench, sweep, case.

Every subcommand is a thin wrapper over the library and prints exactly one
machine-readable JSON line on stdout; diagnostics go to stderr. Exit codes:
0 success, 1 processing failure, 2 bad arguments.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import backends, bench, metrics, prng
from .attacks import ATTACK_KINDS, AttackSpec, attack_apply
from .audio import load_wav, save_wav
from .backends import Payload, WatermarkKey
from .bench import (
    MODE_BACKENDS,
    SWEEP_PARAM,
    dump_case_study,
    embed_mode,
    emit_report,
    run_benchmark,
    score_signal,
    strength_sweep,
)
from .config import BENCH_MODES, BenchConfig, load_bench_config
from .mux import mux_parallel_raw
from .patfm import FusionWeights, fuse_scores, reliability_weights

CONFIG_ENV = "MUXMARK_CONFIG"


def _parse_keys(raw: str) -> dict:
    """Parse 'ss=123,qim=45' into {backend: WatermarkKey}."""
    keys = {}
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"key spec {part!r} is not backend=seed")
        backend, seed = part.split("=", 1)
        backend = backend.strip()
        keys[backend] = WatermarkKey(int(seed), backend)
    if not keys:
        raise ValueError("no keys given")
    return keys


def _parse_params(raw: str | None) -> dict:
    params = {}
    if not raw:
        return params
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        k, v = part.split("=", 1)
        params[k.strip()] = float(v)
    return params


def _default_payloads(keys: dict, n_bits: int) -> dict:
    return {
        b: Payload.random(prng.derive(k.seed, 0xCB1), n_bits) for b, k in keys.items()
    }


def _cmd_embed(args) -> int:
    x = load_wav(args.infile)
    keys = _parse_keys(args.keys)
    cfg = load_bench_config(args.config) if args.config else BenchConfig(dataset_dir=".")
    if args.backends:
        used = tuple(b.strip() for b in args.backends.split(",") if b.strip())
    else:
        used = tuple(b for b in MODE_BACKENDS[args.mode] if b in keys)
    if not used:
        raise ValueError(f"no usable backends for mode {args.mode}")
    missing = [b for b in used if b not in keys]
    if missing:
        raise ValueError(f"missing keys for backends {missing}")
    payload_bits = args.payload_bits or cfg.payload_bits
    payloads = _default_payloads(keys, payload_bits)

    if args.alpha == 0.0:
        y, clipped = x, 0
    elif args.mode in ("single_ss", "single_qim", "single_phase", "parallel"):
        deltas = [backends.embed(b, x, payloads[b], keys[b]) for b in used]
        y, clipped = mux_parallel_raw(x, deltas, [args.alpha] * len(used))
    elif args.mode in ("seq_AB", "seq_BA"):
        y, clipped = x, 0
        for b in used:
            delta = backends.embed(b, y, payloads[b], keys[b])
            y, n = mux_parallel_raw(y, [delta], [args.alpha])
            clipped += n
    elif args.mode == "patfm":
        from .patfm import pa_tfm_embed_raw

        wm_specs = [(b, payloads[b], keys[b]) for b in used]
        scale = dict(zip(bench.ALL_BACKENDS, cfg.patfm_alpha_scale))
        alphas = [min(args.alpha * scale[b], 4.0) for b in used]
        y, clipped = pa_tfm_embed_raw(
            x, wm_specs, alphas,
            mask_mode=cfg.mask_mode,
            affinity=cfg.patfm_affinity if cfg.patfm_affinity != "none" else None,
            gain_floor=cfg.patfm_gain_floor,
            gain_slope=cfg.patfm_gain_slope,
        )
    else:
        from .audio import DEFAULT_STFT, stft
        from .mux import (
            BandPlan,
            SlotPlan,
            apply_tf_routing_raw,
            make_fdm_masks,
            make_tdm_masks,
        )

        deltas = [backends.embed(b, x, payloads[b], keys[b]) for b in used]
        spec = stft(x, DEFAULT_STFT)
        if args.mode == "fdm":
            plan = BandPlan(tuple(bench._FDM_BANDS[b] for b in used))
            masks = make_fdm_masks(plan, [args.alpha] * len(used),
                                   spec.grid.shape, DEFAULT_STFT, x.sample_rate)
        else:
            masks = make_tdm_masks(SlotPlan(60.0, len(used)),
                                   [args.alpha] * len(used),
                                   spec.grid.shape, DEFAULT_STFT, x.sample_rate)
        y, clipped = apply_tf_routing_raw(x, deltas, masks, DEFAULT_STFT)

    save_wav(y, args.outfile, encoding=args.encoding)
    snr = metrics.snr_db(x, y) if np.any(x.samples != y.samples) else metrics.INF_SNR
    print(json.dumps({
        "out": str(args.outfile),
        "mode": args.mode,
        "snr_db": snr if snr != metrics.INF_SNR else "inf",
        "clipped_samples": clipped,
    }))
    return 0


def _cmd_detect(args) -> int:
    y = load_wav(args.infile)
    keys = _parse_keys(args.keys)
    used = tuple(keys)
    scores = score_signal(y, used, keys, args.payload_bits)
    ordered = [scores[b] for b in used]
    if args.fusion_weights in ("adaptive", ""):
        w = reliability_weights(ordered) if len(ordered) > 1 else FusionWeights.uniform(1)
    elif args.fusion_weights == "uniform":
        w = FusionWeights.uniform(len(ordered))
    else:
        w = FusionWeights(tuple(float(v) for v in args.fusion_weights.split(",")))
    fused = fuse_scores(ordered, w)
    print(json.dumps({
        "detectors": {
            b: {
                "raw": scores[b].raw,
                "z": scores[b].z,
                "logit": scores[b].logit,
                "bits": list(scores[b].bits) if scores[b].bits else None,
            }
            for b in used
        },
        "fused_logit": fused.logit,
        "weights": list(w.w),
    }))
    return 0


def _cmd_attack(args) -> int:
    x = load_wav(args.infile)
    spec = AttackSpec(args.kind, _parse_params(args.params))
    y = attack_apply(x, spec, args.seed)
    save_wav(y, args.outfile, encoding=args.encoding)
    print(json.dumps({"out": str(args.outfile), "kind": args.kind, "seed": args.seed}))
    return 0


def _load_config(args) -> BenchConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        raise ValueError(f"no --config given and {CONFIG_ENV} unset")
    return load_bench_config(path)


def _cmd_bench(args) -> int:
    cfg = _load_config(args)
    if args.jobs is not None:
        from dataclasses import replace

        cfg = replace(cfg, jobs=args.jobs)
    report = run_benchmark(cfg)
    files = emit_report(report, "csv", cfg.output_dir)
    files += emit_report(report, "json", cfg.output_dir)
    print(json.dumps({
        "output_dir": str(cfg.output_dir),
        "files": [str(f) for f in files],
        "config_hash": report.meta["config_hash"],
        "cells": len(report.cells),
    }))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    strengths = [float(v) for v in args.strengths.split(",")]
    result = strength_sweep(cfg, args.attack, strengths)
    from pathlib import Path

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{args.attack}.json"
    path.write_text(json.dumps(result, indent=2, sort_keys=True))
    print(json.dumps({"out": str(path), "attack": args.attack,
                      "strengths": result["strengths"]}))
    return 0


def _cmd_case(args) -> int:
    x = load_wav(args.infile)
    keys = _parse_keys(args.keys)
    payloads = _default_payloads(keys, args.payload_bits)
    cfg = BenchConfig(dataset_dir=".")
    y, _ = embed_mode(args.mode, x, keys, payloads, cfg)
    attacked = attack_apply(y, AttackSpec(args.kind, _parse_params(args.params)),
                            args.seed)
    files = dump_case_study(x, y, attacked, args.out_dir)
    print(json.dumps({"out_dir": str(args.out_dir),
                      "files": [str(f) for f in files]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="muxmark",
        description="Multiplexed audio watermarking and robustness benchmarking",
    )
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("embed", help="embed watermarks into a WAV file")
    pe.add_argument("--in", dest="infile", required=True)
    pe.add_argument("--out", dest="outfile", required=True)
    pe.add_argument("--mode", choices=BENCH_MODES, default="parallel")
    pe.add_argument("--backends", default="",
                    help="comma-separated backend subset (default: all keyed)")
    pe.add_argument("--keys", required=True,
                    help="comma-separated backend=seed pairs, e.g. ss=11,phase=22")
    pe.add_argument("--alpha", type=float, default=1.0,
                    help="strength multiplier (0 copies the input)")
    pe.add_argument("--payload-bits", type=int, default=0,
                    help="payload length (default: config value or 16)")
    pe.add_argument("--config", default=None,
                    help="optional bench config supplying patfm/fusion options")
    pe.add_argument("--encoding", choices=("pcm16", "float32"), default="float32")
    pe.set_defaults(func=_cmd_embed)

    pd = sub.add_parser("detect", help="score a WAV file for watermarks")
    pd.add_argument("--in", dest="infile", required=True)
    pd.add_argument("--keys", required=True)
    pd.add_argument("--fusion-weights", default="adaptive",
                    help="'adaptive', 'uniform', or comma-separated weights")
    pd.add_argument("--payload-bits", type=int, default=16)
    pd.set_defaults(func=_cmd_detect)

    pa = sub.add_parser("attack", help="apply one dilution attack")
    pa.add_argument("--in", dest="infile", required=True)
    pa.add_argument("--out", dest="outfile", required=True)
    pa.add_argument("--kind", choices=ATTACK_KINDS, required=True)
    pa.add_argument("--params", default="", help="comma-separated name=value")
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--encoding", choices=("pcm16", "float32"), default="float32")
    pa.set_defaults(func=_cmd_attack)

    pb = sub.add_parser("bench", help="run the benchmark grid from a config file")
    pb.add_argument("--config", default=None,
                    help=f"config path (default: ${CONFIG_ENV})")
    pb.add_argument("--jobs", type=int, default=None)
    pb.set_defaults(func=_cmd_bench)

    ps = sub.add_parser("sweep", help="attack-strength sweep with TPR curves")
    ps.add_argument("--config", default=None)
    ps.add_argument("--attack", choices=sorted(SWEEP_PARAM), required=True)
    ps.add_argument("--strengths", required=True,
                    help="comma-separated strength values")
    ps.set_defaults(func=_cmd_sweep)

    pc = sub.add_parser("case", help="dump spectrogram case-study grids")
    pc.add_argument("--in", dest="infile", required=True)
    pc.add_argument("--keys", required=True)
    pc.add_argument("--mode", choices=BENCH_MODES, default="patfm")
    pc.add_argument("--kind", choices=ATTACK_KINDS, default="gaussian_noise")
    pc.add_argument("--params", default="snr_db=20")
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--payload-bits", type=int, default=16)
    pc.add_argument("--out-dir", dest="out_dir", required=True)
    pc.set_defaults(func=_cmd_case)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # processing failure -> exit 1, message on stderr
        print(f"muxmark: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
