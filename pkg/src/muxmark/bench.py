"""Benchmark harness: dataset ingestion, the mode x attack grid, reports.

For every mode the positives are embedded once per utterance; negatives stay
clean. Both pools then pass through every attack (attacking the negatives
too keeps the detector nulls honest under distribution shift) and are scored
with the mode's detectors, fused for multiplexed modes. Reports carry no
timestamps, so a rerun with the same seeds is byte-identical.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import backends, metrics, prng
from .attacks import AttackSpec, CodecRunError, attack_apply
from .audio import DEFAULT_STFT, AudioBuffer, load_wav, stft, synth_speech_like
from .backends import DetectionScore, Payload, WatermarkKey
from .config import BenchConfig
from .mux import BandPlan, SlotPlan, make_fdm_masks, make_tdm_masks
from .mux import apply_tf_routing_raw, mux_parallel_raw
from .patfm import (
    FusionWeights,
    calibrated_weights,
    fuse_scores,
    pa_tfm_embed_raw,
    reliability_weights,
)

SCHEMA_VERSION = 1

ALL_BACKENDS = ("ss", "qim", "phase")

MODE_BACKENDS = {
    "single_ss": ("ss",),
    "single_qim": ("qim",),
    "single_phase": ("phase",),
    "parallel": ALL_BACKENDS,
    "seq_AB": ("ss", "phase"),
    "seq_BA": ("phase", "ss"),
    "fdm": ALL_BACKENDS,
    "tdm": ALL_BACKENDS,
    "patfm": ALL_BACKENDS,
}

# FDM: deliberately give each backend the band closest to its own footprint
_FDM_BANDS = {"phase": (0.0, 2000.0), "qim": (2000.0, 5000.0), "ss": (5000.0, 8000.0)}

_TAG_KEY = 0xA1
_TAG_PAYLOAD = 0xA2
_TAG_ATTACK = 0xA3


@dataclass
class CellResult:
    """One (mode, attack) cell of the report."""

    auc: float = math.nan
    tpr: dict = field(default_factory=dict)
    pos_scores: list = field(default_factory=list)
    neg_scores: list = field(default_factory=list)
    failed: bool = False
    reason: str = ""


@dataclass
class ModeSummary:
    snr_db_mean: float
    stoi_mean: float
    auc_macro: float
    tpr_macro: dict
    clipped_samples: int


@dataclass
class EvalReport:
    cells: dict            # (mode, attack_name) -> CellResult
    mode_summary: dict     # mode -> ModeSummary
    meta: dict

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "meta": self.meta,
            "cells": {
                f"{mode}|{attack}": {
                    "auc": c.auc,
                    "tpr": {repr(k): v for k, v in c.tpr.items()},
                    "pos_scores": c.pos_scores,
                    "neg_scores": c.neg_scores,
                    "failed": c.failed,
                    "reason": c.reason,
                }
                for (mode, attack), c in sorted(self.cells.items())
            },
            "mode_summary": {
                mode: {
                    "snr_db_mean": s.snr_db_mean,
                    "stoi_mean": s.stoi_mean,
                    "auc_macro": s.auc_macro,
                    "tpr_macro": {repr(k): v for k, v in s.tpr_macro.items()},
                    "clipped_samples": s.clipped_samples,
                }
                for mode, s in sorted(self.mode_summary.items())
            },
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        cells = {}
        for key, c in d["cells"].items():
            mode, attack = key.split("|", 1)
            cells[(mode, attack)] = CellResult(
                auc=c["auc"],
                tpr={float(k): v for k, v in c["tpr"].items()},
                pos_scores=list(c["pos_scores"]),
                neg_scores=list(c["neg_scores"]),
                failed=c["failed"],
                reason=c["reason"],
            )
        summary = {
            mode: ModeSummary(
                snr_db_mean=s["snr_db_mean"],
                stoi_mean=s["stoi_mean"],
                auc_macro=s["auc_macro"],
                tpr_macro={float(k): v for k, v in s["tpr_macro"].items()},
                clipped_samples=s["clipped_samples"],
            )
            for mode, s in d["mode_summary"].items()
        }
        return cls(cells=cells, mode_summary=summary, meta=dict(d["meta"]))


def ingest_dataset(dataset_dir, cap: int, expected_rate: int = 16000) -> list:
    """WAV paths in lexicographic order, truncated to ``cap``.

    Every file is opened to validate the sample rate; a mismatch is an error
    naming the file (no silent resampling).
    """
    d = Path(dataset_dir)
    paths = sorted(p for p in d.glob("*.wav"))
    if not paths:
        raise ValueError(f"no WAV files found in {dataset_dir}")
    paths = paths[:cap]
    for p in paths:
        buf = load_wav(p)
        if buf.sample_rate != expected_rate:
            raise ValueError(
                f"{p}: sample rate {buf.sample_rate} != required {expected_rate}"
            )
    return paths


def make_synthetic_corpus(out_dir, count: int, duration: float = 3.0, seed: int = 0,
                          sample_rate: int = 16000) -> list:
    """Write a deterministic speech-shaped noise corpus; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        buf = synth_speech_like(duration, seed=prng.derive(seed, 0xC0, i),
                                sample_rate=sample_rate)
        p = out / f"utt_{i:04d}.wav"
        from .audio import save_wav

        save_wav(buf, p, encoding="float32")
        paths.append(p)
    return paths


def utterance_keys(seed: int, index: int, payload_bits: int):
    keys = {
        b: WatermarkKey(prng.derive(seed, _TAG_KEY, index, j), b)
        for j, b in enumerate(ALL_BACKENDS)
    }
    payloads = {
        b: Payload.random(prng.derive(seed, _TAG_PAYLOAD, index, j), payload_bits)
        for j, b in enumerate(ALL_BACKENDS)
    }
    return keys, payloads


def embed_mode(mode: str, x: AudioBuffer, keys: dict, payloads: dict,
               cfg: BenchConfig) -> tuple[AudioBuffer, int]:
    """Embed one multiplexing mode; returns (watermarked, clipped samples)."""
    used = MODE_BACKENDS[mode]
    if mode.startswith("single_"):
        b = used[0]
        delta = backends.embed(b, x, payloads[b], keys[b])
        return mux_parallel_raw(x, [delta], [1.0])
    if mode == "parallel":
        deltas = [backends.embed(b, x, payloads[b], keys[b]) for b in used]
        return mux_parallel_raw(x, deltas, [1.0] * len(used))
    if mode in ("seq_AB", "seq_BA"):
        current = x
        clipped = 0
        for b in used:
            delta = backends.embed(b, current, payloads[b], keys[b])
            current, n = mux_parallel_raw(current, [delta], [1.0])
            clipped += n
        return current, clipped
    if mode == "fdm":
        deltas = [backends.embed(b, x, payloads[b], keys[b]) for b in used]
        spec = stft(x, DEFAULT_STFT)
        plan = BandPlan(tuple(_FDM_BANDS[b] for b in used))
        masks = make_fdm_masks(plan, [1.0] * len(used), spec.grid.shape,
                               DEFAULT_STFT, x.sample_rate)
        return apply_tf_routing_raw(x, deltas, masks, DEFAULT_STFT)
    if mode == "tdm":
        deltas = [backends.embed(b, x, payloads[b], keys[b]) for b in used]
        spec = stft(x, DEFAULT_STFT)
        masks = make_tdm_masks(SlotPlan(60.0, len(used)), [1.0] * len(used),
                               spec.grid.shape, DEFAULT_STFT, x.sample_rate)
        return apply_tf_routing_raw(x, deltas, masks, DEFAULT_STFT)
    if mode == "patfm":
        wm_specs = [(b, payloads[b], keys[b]) for b in used]
        scale = dict(zip(ALL_BACKENDS, cfg.patfm_alpha_scale))
        return pa_tfm_embed_raw(
            x,
            wm_specs,
            [scale[b] for b in used],
            DEFAULT_STFT,
            mask_mode=cfg.mask_mode,
            affinity=cfg.patfm_affinity if cfg.patfm_affinity != "none" else None,
            gain_floor=cfg.patfm_gain_floor,
            gain_slope=cfg.patfm_gain_slope,
        )
    raise ValueError(f"unknown mode {mode!r}")


def fuse_mode_scores(zs, cfg: BenchConfig, weights: FusionWeights | None = None) -> float:
    """Fuse per-backend z values per the config's fusion policy."""
    if len(zs) == 1:
        return float(zs[0])
    scores = [DetectionScore(raw=z, z=z, logit=z) for z in zs]
    if weights is not None:
        w = weights
    elif cfg.fusion == "adaptive":
        w = reliability_weights(scores, cfg.fusion_temperature)
    else:
        w = FusionWeights.uniform(len(scores))
    return float(fuse_scores(scores, w).logit)


def score_signal(y: AudioBuffer, used: tuple, keys: dict,
                 payload_bits: int) -> dict:
    """Per-backend detection scores with a shared STFT."""
    spec = stft(y, DEFAULT_STFT)
    return {
        b: backends.detect(b, y, keys[b], spec=spec, n_bits=payload_bits)
        for b in used
    }


def _utterance_work(args) -> dict:
    """All embedding, attacking, and scoring for one utterance.

    Returns per-backend z tuples per cell; fusion happens at merge time so
    the calibrated policy can weight from the whole batch.
    """
    index, samples, sample_rate, cfg = args
    x = AudioBuffer(samples, sample_rate)
    keys, payloads = utterance_keys(cfg.seed, index, cfg.payload_bits)

    out: dict = {
        "index": index,
        "mode_stats": {},
        "cells": {},
        "cell_failures": {},
        "clean_z": {},
    }
    embedded: dict = {}
    for mode in cfg.modes:
        y, clipped = embed_mode(mode, x, keys, payloads, cfg)
        embedded[mode] = y
        out["mode_stats"][mode] = {
            "snr_db": metrics.snr_db(x, y),
            "stoi": metrics.stoi(x, y),
            "clipped": clipped,
        }
        if cfg.fusion == "calibrated" and len(MODE_BACKENDS[mode]) > 1:
            det = score_signal(y, MODE_BACKENDS[mode], keys, cfg.payload_bits)
            out["clean_z"][mode] = tuple(det[b].z for b in MODE_BACKENDS[mode])

    for a_idx, attack in enumerate(cfg.attacks):
        attack_seed = prng.derive(cfg.seed, _TAG_ATTACK, a_idx, index)
        try:
            neg = attack_apply(x, attack, attack_seed)
            neg_scores = score_signal(neg, ALL_BACKENDS, keys, cfg.payload_bits)
            for mode in cfg.modes:
                pos = attack_apply(embedded[mode], attack, attack_seed)
                pos_det = score_signal(pos, MODE_BACKENDS[mode], keys, cfg.payload_bits)
                out["cells"][(mode, attack.name)] = (
                    tuple(pos_det[b].z for b in MODE_BACKENDS[mode]),
                    tuple(neg_scores[b].z for b in MODE_BACKENDS[mode]),
                )
        except CodecRunError as exc:
            for mode in cfg.modes:
                out["cell_failures"][(mode, attack.name)] = str(exc)
    return out


def run_benchmark(cfg: BenchConfig) -> EvalReport:
    """Run the full {mode x attack} grid and assemble the report."""
    paths = ingest_dataset(cfg.dataset_dir, cfg.utterance_cap)
    buffers = [load_wav(p) for p in paths]
    attacks = list(cfg.attacks) + [
        AttackSpec("external_codec", {"command": c}, name=c.name)
        for c in cfg.codec_commands
    ]
    run_cfg = cfg
    if cfg.codec_commands:
        run_cfg = replace(cfg, attacks=tuple(attacks), codec_commands=())

    tasks = [
        (i, buf.samples, buf.sample_rate, run_cfg) for i, buf in enumerate(buffers)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_utterance_work, tasks))
    else:
        results = [_utterance_work(t) for t in tasks]
    results.sort(key=lambda r: r["index"])

    calibrated: dict = {}
    if run_cfg.fusion == "calibrated":
        for mode in run_cfg.modes:
            batches = [r["clean_z"][mode] for r in results if mode in r["clean_z"]]
            if batches:
                per_detector = list(zip(*batches))
                calibrated[mode] = calibrated_weights(per_detector)

    cells: dict = {}
    failures: dict = {}
    for r in results:
        for key, reason in r["cell_failures"].items():
            failures.setdefault(key, reason)
        for key, (pos_zs, neg_zs) in r["cells"].items():
            mode = key[0]
            w = calibrated.get(mode)
            cells.setdefault(key, CellResult()).pos_scores.append(
                fuse_mode_scores(pos_zs, run_cfg, w)
            )
            cells[key].neg_scores.append(fuse_mode_scores(neg_zs, run_cfg, w))

    for mode in run_cfg.modes:
        for attack in run_cfg.attacks:
            key = (mode, attack.name)
            if key in failures:
                cells[key] = CellResult(failed=True, reason=failures[key])
                continue
            c = cells.get(key)
            if c is None or not c.pos_scores:
                cells[key] = CellResult(failed=True, reason="no scores produced")
                continue
            c.auc = metrics.roc_auc(c.pos_scores, c.neg_scores)
            c.tpr = {
                f: metrics.tpr_at_fpr(c.pos_scores, c.neg_scores, f)
                for f in run_cfg.target_fprs
            }

    mode_summary = {}
    for mode in run_cfg.modes:
        snrs = [r["mode_stats"][mode]["snr_db"] for r in results]
        stois = [r["mode_stats"][mode]["stoi"] for r in results]
        clips = sum(r["mode_stats"][mode]["clipped"] for r in results)
        ok_cells = [
            cells[(mode, a.name)]
            for a in run_cfg.attacks
            if not cells[(mode, a.name)].failed
        ]
        mode_summary[mode] = ModeSummary(
            snr_db_mean=float(np.mean([s for s in snrs if math.isfinite(s)])),
            stoi_mean=float(np.mean(stois)),
            auc_macro=float(np.mean([c.auc for c in ok_cells])) if ok_cells else math.nan,
            tpr_macro={
                f: float(np.mean([c.tpr[f] for c in ok_cells])) if ok_cells else math.nan
                for f in run_cfg.target_fprs
            },
            clipped_samples=clips,
        )

    meta = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "n_utterances": len(buffers),
        "modes": list(run_cfg.modes),
        "attacks": [a.name for a in run_cfg.attacks],
        "target_fprs": list(run_cfg.target_fprs),
    }
    return EvalReport(cells=cells, mode_summary=mode_summary, meta=meta)


def emit_report(report: EvalReport, fmt: str, out_dir) -> list:
    """Write report files; returns the created paths.

    ``csv`` emits the attack-by-mode matrix (one "AUC/TPR" pair per mode)
    and the per-mode averages table; ``json`` emits the full dump.
    """
    if not report.cells:
        raise ValueError("empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []
    modes = report.meta["modes"]
    attacks = report.meta["attacks"]
    fprs = report.meta["target_fprs"]

    if fmt == "csv":
        lead_fpr = fprs[0]
        lines = ["attack," + ",".join(modes)]
        for a in attacks:
            row = [a]
            for m in modes:
                c = report.cells[(m, a)]
                row.append(
                    "failed" if c.failed else f"{c.auc:.3f}/{c.tpr[lead_fpr]:.3f}"
                )
            lines.append(",".join(row))
        matrix = out / "table_attacks.csv"
        matrix.write_text("\n".join(lines) + "\n")
        created.append(matrix)

        header = ["mode", "PESQ", "STOI", "SNR_dB", "AUC"] + [
            f"TPR@{f:g}" for f in fprs
        ]
        lines = [",".join(header)]
        for m in modes:
            s = report.mode_summary[m]
            row = [m, "", f"{s.stoi_mean:.3f}", f"{s.snr_db_mean:.1f}",
                   f"{s.auc_macro:.3f}"]
            row += [f"{s.tpr_macro[f]:.3f}" for f in fprs]
            lines.append(",".join(row))
        summary = out / "table_modes.csv"
        summary.write_text("\n".join(lines) + "\n")
        created.append(summary)
    elif fmt == "json":
        path = out / "report.json"
        path.write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
        created.append(path)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return created


def dump_case_study(x: AudioBuffer, watermarked: AudioBuffer, attacked: AudioBuffer,
                    out_dir, cfg=DEFAULT_STFT) -> list:
    """Write dB-magnitude spectrogram grids for external plotting.

    Panels: original, watermarked, watermark difference, attacked, and
    attack difference; all share dimensions. Values are
    20*log10(|X| + 1e-12), so a zero difference floors at -240 dB.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def db(buf: AudioBuffer) -> np.ndarray:
        return 20.0 * np.log10(np.abs(stft(buf, cfg).grid) + 1e-12)

    def diff_db(a: AudioBuffer, b: AudioBuffer) -> np.ndarray:
        return db(AudioBuffer(a.samples - b.samples, a.sample_rate))

    panels = {
        "original": db(x),
        "watermarked": db(watermarked),
        "difference": diff_db(watermarked, x),
        "attacked": db(attacked),
        "attacked_difference": diff_db(attacked, x),
    }
    created = []
    for name, grid in panels.items():
        p = out / f"{name}.txt"
        np.savetxt(p, grid, fmt="%.6e")
        created.append(p)
    meta = out / "meta.json"
    meta.write_text(json.dumps({
        "panels": sorted(panels),
        "n_frames": int(panels["original"].shape[0]),
        "n_bins": int(panels["original"].shape[1]),
        "sample_rate": x.sample_rate,
        "frame_len": cfg.frame_len,
        "hop": cfg.hop,
    }, indent=2, sort_keys=True))
    created.append(meta)
    return created


# strength-sweep support: the parameter each kind sweeps over
SWEEP_PARAM = {
    "gaussian_noise": "snr_db",
    "uniform_noise": "snr_db",
    "amplitude_scale": "gain",
    "zero_mask": "fraction",
    "time_shift": "max_shift_ms",
    "lowpass": "cutoff_hz",
    "time_stretch": "rate",
    "fft_mask": "fraction",
    "crop_invert": "fraction",
    "rir": "rt60_ms",
    "echo": "gain",
}


def sweep_attack_spec(kind: str, strength: float) -> AttackSpec:
    if kind not in SWEEP_PARAM:
        raise ValueError(f"attack kind {kind!r} is not sweepable")
    params = {SWEEP_PARAM[kind]: strength}
    if kind == "echo":
        params["delay_ms"] = 100.0
    if kind == "rir":
        params["drr_db"] = 0.0
    return AttackSpec(kind, params, name=f"{kind}_{strength:g}")


def strength_sweep(cfg: BenchConfig, attack_kind: str, strengths) -> dict:
    """TPR curves per single detector and per fused mode over a strength grid.

    Returns {"strengths": [...], "curves": {name: {fpr: [tpr per strength]}}}
    where names are the three single detectors plus every multi-watermark
    mode in the config.
    """
    paths = ingest_dataset(cfg.dataset_dir, cfg.utterance_cap)
    buffers = [load_wav(p) for p in paths]
    single_modes = ["single_ss", "single_qim", "single_phase"]
    fused_modes = [m for m in cfg.modes if len(MODE_BACKENDS[m]) > 1]
    sweep_modes = single_modes + fused_modes

    embedded = {}
    key_map = {}
    for i, x in enumerate(buffers):
        keys, payloads = utterance_keys(cfg.seed, i, cfg.payload_bits)
        key_map[i] = keys
        for mode in sweep_modes:
            embedded[(mode, i)] = embed_mode(mode, x, keys, payloads, cfg)[0]

    curves: dict = {m: {f: [] for f in cfg.target_fprs} for m in sweep_modes}
    for s_idx, strength in enumerate(strengths):
        spec = sweep_attack_spec(attack_kind, float(strength))
        pos_pool: dict = {m: [] for m in sweep_modes}
        neg_pool: dict = {m: [] for m in sweep_modes}
        for i, x in enumerate(buffers):
            seed = prng.derive(cfg.seed, _TAG_ATTACK, 0x5EE9, s_idx, i)
            neg = attack_apply(x, spec, seed)
            neg_scores = score_signal(neg, ALL_BACKENDS, key_map[i], cfg.payload_bits)
            for mode in sweep_modes:
                pos = attack_apply(embedded[(mode, i)], spec, seed)
                det = score_signal(pos, MODE_BACKENDS[mode], key_map[i], cfg.payload_bits)
                pos_pool[mode].append(
                    fuse_mode_scores([det[b].z for b in MODE_BACKENDS[mode]], cfg)
                )
                neg_pool[mode].append(
                    fuse_mode_scores(
                        [neg_scores[b].z for b in MODE_BACKENDS[mode]], cfg
                    )
                )
        for mode in sweep_modes:
            for f in cfg.target_fprs:
                curves[mode][f].append(
                    metrics.tpr_at_fpr(pos_pool[mode], neg_pool[mode], f)
                )
    return {
        "attack_kind": attack_kind,
        "strengths": [float(s) for s in strengths],
        "curves": {
            m: {repr(f): v for f, v in per.items()} for m, per in curves.items()
        },
    }
