"""Command-line interface: ``tbnn-aec <verb> ...``.

Verbs: process, simulate, evaluate, delay, bench, validate-weights, describe.
Reports are JSON on stdout (or ``--report``).  Exit codes: 0 success,
2 configuration error, 3 data error, 4 non-finite values.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .datasim import (SCENARIOS, Nonlinearity, SyntheticCorpus, WavCorpus, load_scene,
                      measured_levels, mix_scene, read_manifest, sample_scene_spec, short_rir,
                      write_scene)
from .dsp import DEFAULT_STFT, StftConfig
from .errors import (AecError, ConfigurationError, ContractError, DataError,
                     InsufficientDataError, NumericError, StageError)
from .losses import loss_plcpa
from .metrics import erle, si_sdr
from .nlms import NlmsConfig
from .nn.manifest import load_manifest
from .pipeline import tbnn_process
from .postfilter import TBNN, TbnnConfig
from .tde import TdeConfig, estimate_delay
from .wavio import wav_read, wav_write

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PAPER_RTF = {"total": 0.35, "postfilter": 0.28, "tde_linear": 0.07}


@dataclass
class CliConfig:
    """Run configuration; a JSON file given with ``--config`` may set any of these keys."""

    preset: str = "small"
    weights: str | None = None
    seed: int = 0
    stft: dict = field(default_factory=dict)
    nlms: dict = field(default_factory=dict)
    tde: dict = field(default_factory=dict)
    threads: int = 1
    chunk: int | None = None

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.build()
        return cfg

    def build(self):
        """Instantiate the typed configs; rejects unknown override keys."""
        out = {}
        for name, klass in (("stft", StftConfig), ("nlms", NlmsConfig), ("tde", TdeConfig)):
            overrides = getattr(self, name)
            known = {f.name for f in fields(klass)}
            bad = sorted(set(overrides) - known)
            if bad:
                raise ConfigurationError(f"unknown {name} keys: {', '.join(bad)}")
            out[name] = klass(**overrides)
        if out["stft"] != DEFAULT_STFT:
            raise ConfigurationError("the post-filter graph is fixed to the default STFT layout")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        TbnnConfig.preset(self.preset)
        return out

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _load_config(args):
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigurationError("config file must hold a JSON object")
    for key in ("preset", "weights", "seed", "threads", "chunk"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    return CliConfig.from_dict(base)


def _model(cfg, linear_only=False):
    if linear_only:
        return None
    tcfg = TbnnConfig.preset(cfg.preset)
    if cfg.weights:
        return TBNN.from_manifest(load_manifest(cfg.weights), tcfg)
    return TBNN.from_seed(tcfg, cfg.seed)


def _emit(report, path=None):
    text = json.dumps(report, indent=2, sort_keys=True, default=float)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _report_header(cfg):
    return {"tool": "tbnn-aec", "version": __version__, "config": asdict(cfg),
            "config_hash": cfg.digest()}


# ---------------------------------------------------------------- process

def _fe_erle(mic, out, near, frame=480):
    """ERLE over frames with no near-end activity (from the clean near-end file)."""
    from .datasim import frame_energy, vad_labels

    idle = vad_labels(near) == 0
    mic_e, out_e = frame_energy(mic, frame), frame_energy(out, frame)
    idle &= mic_e > 0
    if not idle.any():
        return None
    return float(10 * np.log10(mic_e[idle].sum() / max(out_e[idle].sum(), 1e-30)))


def _process_one(job, cfg, built, model, args):
    mic = wav_read(job["mic"]).samples
    ref = wav_read(job["ref"]).samples
    if len(mic) != len(ref):
        raise ContractError(f"{job['mic']} and {job['ref']} differ in length: "
                            f"{len(mic)} vs {len(ref)}")
    t0 = time.perf_counter()
    out, diag = tbnn_process(mic, ref, model, chunk=cfg.chunk, linear_only=args.linear_only,
                             delay=args.delay, nlms_cfg=built["nlms"], tde_cfg=built["tde"])
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite output samples")
    wav_write(job["out"], out)
    rec = {"mic": str(job["mic"]), "ref": str(job["ref"]), "out": str(job["out"]),
           "delay_samples": diag.delay.delay, "delay_ms": diag.delay.ms(),
           "delay_confidence": diag.delay.confidence, "frames": diag.frames,
           "rtf": elapsed / (len(mic) / DEFAULT_STFT.sample_rate),
           "mean_vad": float(np.nanmean(diag.vad)) if not args.linear_only else None}
    if job.get("near"):
        rec["erle_fe_db"] = _fe_erle(mic, out, wav_read(job["near"]).samples)
    return rec


def cmd_process(args):
    cfg = _load_config(args)
    built = cfg.build()
    model = _model(cfg, args.linear_only)
    if args.batch:
        jobs = [json.loads(line) for line in Path(args.batch).read_text().splitlines() if line.strip()]
    else:
        if not (args.mic and args.ref and args.out):
            raise ConfigurationError("process needs --mic, --ref and --out (or --batch)")
        jobs = [{"mic": args.mic, "ref": args.ref, "out": args.out, "near": args.near}]
    # one BLAS thread per job keeps batch outputs identical to sequential runs
    with threadpool_limits(1):
        if cfg.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(cfg.threads) as pool:
                records = list(pool.map(lambda j: _process_one(j, cfg, built, model, args), jobs))
        else:
            records = [_process_one(j, cfg, built, model, args) for j in jobs]
    report = _report_header(cfg)
    report.update({"command": "process", "linear_only": args.linear_only, "files": records})
    _emit(report, args.report)
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def cmd_simulate(args):
    out_dir = Path(args.out_dir)
    speech = WavCorpus(args.speech_dir) if args.speech_dir else SyntheticCorpus("speech", 16, args.seed)
    noise = WavCorpus(args.noise_dir) if args.noise_dir else SyntheticCorpus("noise", 8, args.seed)
    records = []
    for i in range(args.n):
        seed = args.seed * 1_000_003 + i
        spec = sample_scene_spec(seed, args.scenario, args.duration, snr=args.snr, ser=args.ser,
                                 rt60=args.rt60, delay=args.delay)
        if args.linear_echo:
            spec = replace(spec, nonlinearity=Nonlinearity(enabled=False))
        rir = short_rir(args.echo_rir_len, seed) if args.echo_rir_len else None
        scene = mix_scene(spec, speech, noise, echo_rir=rir, with_noise=not args.no_noise)
        records.append(write_scene(scene, out_dir))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    _emit({"command": "simulate", "scenes": len(records), "manifest": str(manifest),
           "seed": args.seed})
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def _check_scene(scene):
    ok = np.array_equal(scene.d, scene.s + scene.r + scene.v + scene.z)
    return {"sum_identity": bool(ok), **{k: float(v) for k, v in measured_levels(scene).items()}}


def _evaluate_scene(rec, root, args, model):
    scene = load_scene(rec, root)
    row = {"name": rec["name"], "scenario": scene.spec.scenario}
    if args.check:
        row.update(_check_scene(scene))
    if args.mode == "files":
        path = Path(args.enhanced_dir) / f"{rec['name']}.wav"
        enhanced = wav_read(path).samples
        if len(enhanced) != len(scene.d):
            raise ContractError(f"{path}: length {len(enhanced)} != scene length {len(scene.d)}")
    elif args.mode in ("nlms", "tbnn"):
        delay = scene.spec.delay if args.oracle_delay else None
        enhanced, _ = tbnn_process(scene.d, scene.x, model, linear_only=args.mode == "nlms",
                                   delay=delay)
    else:
        return row
    skip = int(args.erle_skip * scene.spec.sample_rate)
    if scene.spec.scenario == "ST-FE":
        row["erle_db"] = erle(scene.d, enhanced, (skip, len(scene.d)))
    else:
        sdr = si_sdr(enhanced, scene.s)
        row["si_sdr_db"], row["si_sdr_capped"] = sdr.value, sdr.capped
    if args.losses and scene.spec.scenario != "ST-FE":
        from .dsp import stft

        row["loss_plcpa"] = loss_plcpa(stft(enhanced).data, stft(scene.s).data).value
    return row


def cmd_evaluate(args):
    manifest = Path(args.manifest)
    records = read_manifest(manifest)
    if args.mode == "files" and not args.enhanced_dir:
        raise ConfigurationError("--enhanced-dir is required in files mode")
    model = None
    if args.mode == "tbnn":
        model = _model(_load_config(args))
    rows = [_evaluate_scene(r, manifest.parent, args, model) for r in records]
    agg = {}
    for key in ("erle_db", "si_sdr_db"):
        vals = [r[key] for r in rows if key in r]
        if vals:
            agg[f"mean_{key}"] = float(np.mean(vals))
    report = {"command": "evaluate", "mode": args.mode, "scenes": rows, "aggregate": agg}
    if args.check:
        report["all_identities_hold"] = all(r["sum_identity"] for r in rows)
    if args.csv:
        keys = sorted({k for r in rows for k in r})
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)
    _emit(report, args.report)
    if args.check and not report["all_identities_hold"]:
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------- delay / bench / weights

def cmd_delay(args):
    cfg = _load_config(args)
    built = cfg.build()
    mic, ref = wav_read(args.mic).samples, wav_read(args.ref).samples
    est = estimate_delay(mic, ref, built["tde"])
    _emit({"command": "delay", "delay_samples": est.delay, "delay_ms": est.ms(),
           "confidence": est.confidence, "config_hash": cfg.digest()})
    return EXIT_OK


def bench(duration=10.0, preset="small", seed=0, model=None):
    """Time the pipeline on synthetic far-end speech plus echo; returns the RTF report."""
    fs = DEFAULT_STFT.sample_rate
    model = model or TBNN.from_seed(TbnnConfig.preset(preset), seed)
    x = SyntheticCorpus("speech", 1, seed).clip(0, duration)
    mic = np.convolve(x, short_rir(64, seed))[:len(x)] + SyntheticCorpus("noise", 1, seed).clip(0, duration) * 0.01
    with threadpool_limits(1):
        t0 = time.perf_counter()
        _, diag = tbnn_process(mic, x, model, delay=None)
        total = time.perf_counter() - t0
    audio = len(x) / fs
    rtf_total = total / audio
    rtf_lin = diag.time_linear / audio
    rtf_pf = diag.time_postfilter / audio
    return {
        "audio_seconds": audio,
        "preset": preset,
        "channels": model.cfg.channels,
        "threads": 1,
        "rtf_total": rtf_total,
        "rtf_postfilter": rtf_pf,
        "rtf_tde_linear": rtf_lin,
        "split_sum": rtf_pf + rtf_lin,
        "split_relative_gap": abs(rtf_pf + rtf_lin - rtf_total) / rtf_total,
        "reference": {**PAPER_RTF, "note": "published single-thread figures; context only, "
                                           "not comparable across machines"},
    }


def cmd_bench(args):
    cfg = _load_config(args)
    report = bench(args.duration, cfg.preset, cfg.seed, _model(cfg))
    report["config_hash"] = cfg.digest()
    _emit(report, args.report)
    return EXIT_OK


def cmd_validate_weights(args):
    cfg = _load_config(args)
    manifest = load_manifest(args.weights)
    stored = manifest.metadata.get("config")
    tcfg = TbnnConfig(**stored) if stored else TbnnConfig.preset(cfg.preset)
    model = TBNN.from_manifest(manifest, tcfg, allow_unused=args.allow_unused)
    _emit({"command": "validate-weights", "ok": True, "tensors": len(manifest.entries),
           "values": manifest.num_values, "bound_values": model.num_parameters(),
           "digest": manifest.digest(), "config_hash": tcfg.digest()})
    return EXIT_OK


def cmd_describe(args):
    cfg = _load_config(args)
    tcfg = TbnnConfig.preset(cfg.preset)
    model = TBNN(tcfg)
    report = {"command": "describe", "preset": cfg.preset, **model.describe_counts()}
    if args.weights or cfg.weights:
        manifest = load_manifest(args.weights or cfg.weights)
        model.bind_manifest(manifest)
        report["manifest_values"] = manifest.num_values
        report["matches_manifest"] = manifest.num_values == report["total_values"]
    if args.save_seed_weights:
        model.seed_manifest(cfg.seed).save(args.save_seed_weights)
        report["saved"] = args.save_seed_weights
    if args.graph:
        report["graph"] = model.graph_definition()
    _emit(report, args.report)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    return lo, hi


def build_parser():
    p = argparse.ArgumentParser(prog="tbnn-aec", description="Full-band hybrid echo canceller.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with CliConfig keys")
        sp.add_argument("--preset", choices=("small", "large"))
        sp.add_argument("--weights", help="weight manifest; default is seeded weights")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--report", help="write the JSON report here instead of stdout")

    sp = sub.add_parser("process", help="cancel echo in mic.wav given ref.wav")
    common(sp)
    sp.add_argument("--mic")
    sp.add_argument("--ref")
    sp.add_argument("--out")
    sp.add_argument("--near", help="clean near-end WAV; enables far-end-only ERLE")
    sp.add_argument("--batch", help="JSONL file of {mic, ref, out[, near]} jobs")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--chunk", type=int, help="feed the stream in chunks of this many samples")
    sp.add_argument("--linear-only", action="store_true", help="output the NLMS error signal")
    sp.add_argument("--delay", type=int, help="fixed reference delay in samples")
    sp.set_defaults(func=cmd_process)

    sp = sub.add_parser("simulate", help="generate echo scenes")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--duration", type=float, default=4.0)
    sp.add_argument("--scenario", choices=SCENARIOS)
    sp.add_argument("--snr", type=_range, default=(0.0, 25.0), help="LO:HI dB")
    sp.add_argument("--ser", type=_range, default=(-15.0, 15.0), help="LO:HI dB")
    sp.add_argument("--rt60", type=_range, default=(0.2, 1.2), help="LO:HI seconds")
    sp.add_argument("--delay", type=_range, default=(0, 24000), help="LO:HI samples")
    sp.add_argument("--speech-dir")
    sp.add_argument("--noise-dir")
    sp.add_argument("--echo-rir-len", type=int, help="use a short synthetic echo path")
    sp.add_argument("--linear-echo", action="store_true", help="disable loudspeaker distortion")
    sp.add_argument("--no-noise", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("evaluate", help="score scenes")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--enhanced-dir")
    sp.add_argument("--mode", choices=("files", "nlms", "tbnn", "none"), default="files")
    sp.add_argument("--check", action="store_true", help="re-validate the mixture identity and levels")
    sp.add_argument("--losses", action="store_true")
    sp.add_argument("--erle-skip", type=float, default=0.0, help="seconds excluded from ERLE")
    sp.add_argument("--oracle-delay", action="store_true",
                    help="align with the simulated bulk delay instead of tracking it")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("delay", help="estimate the echo delay")
    common(sp)
    sp.add_argument("--mic", required=True)
    sp.add_argument("--ref", required=True)
    sp.set_defaults(func=cmd_delay)

    sp = sub.add_parser("bench", help="real-time factor benchmark")
    common(sp)
    sp.add_argument("--duration", type=float, default=10.0)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("validate-weights", help="check a weight manifest against the graph")
    common(sp)
    sp.add_argument("--allow-unused", action="store_true")
    sp.set_defaults(func=cmd_validate_weights)

    sp = sub.add_parser("describe", help="parameter counts and graph definition")
    common(sp)
    sp.add_argument("--graph", action="store_true")
    sp.add_argument("--save-seed-weights", metavar="PATH")
    sp.set_defaults(func=cmd_describe)
    return p


def exit_code(exc):
    if isinstance(exc, StageError):
        return exit_code(exc.cause)
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, ContractError, InsufficientDataError, OSError)):
        return EXIT_DATA
    return EXIT_DATA


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AecError, OSError) as exc:
        print(f"tbnn-aec {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
