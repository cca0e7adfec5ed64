"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

Run config (YAML)::

    model:            # ModelConfig fields
      residual_channels: 32
      dilation_schedule: [1, 2, 4, 8, 16, 32, 64, 1, 2, 4, 8, 16, 32, 64]
      global_cond_dim: 2
    train:            # TrainConfig fields
      max_steps: 500
      segment_length: 512
    data:
      - wav: clips/a.wav
        global_class: 0
      - synth: {kind: sine, frequency_hz: 660, duration_s: 2.0}
        global_class: 1
        local_features: feats.npy   # (T / upsample_factor, dim) array
    output_dir: runs/demo   # relative paths resolve against the config file
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import codec
from .audio_io import SyntheticSpec, read_wav, synth, write_wav
from .errors import ConfigError, WaveNetError
from .model import (
    ClassifierConfig,
    ConditioningInput,
    ModelConfig,
    WaveNetModel,
    doubling_schedule,
    init_params,
    load_checkpoint,
    one_hot,
    probe_receptive_field,
    receptive_field,
)
from .sampler import GenerationRequest, generate_with_nll
from .training import Batch, Clip, TrainConfig, gradient_check, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: list[dict]
    output_dir: str
    base_dir: Path


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise UsageError(f"{where}: expected a mapping, got {type(d).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise UsageError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        if cls is ModelConfig:
            return ModelConfig.from_dict(d)
        if cls is SyntheticSpec:
            d = dict(d)
            for key in ("frequencies", "levels"):
                if d.get(key) is not None:
                    d[key] = tuple(d[key])
            if "transition" in d:
                d["transition"] = tuple(tuple(r) for r in d["transition"])
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{where}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise UsageError(f"{path}: parse error{loc}: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be a mapping")
    unknown = sorted(set(raw) - {"model", "train", "data", "output_dir"})
    if unknown:
        raise UsageError(f"{path}: unknown top-level field(s) {', '.join(unknown)}")
    model = _build(ModelConfig, raw.get("model", {}), "model")
    tcfg = _build(TrainConfig, raw.get("train", {}), "train")
    data = raw.get("data")
    if not isinstance(data, list) or not data:
        raise UsageError(f"{path}: data must be a non-empty list")
    base = path.parent
    for i, entry in enumerate(data):
        where = f"data[{i}]"
        if not isinstance(entry, dict) or ("wav" in entry) == ("synth" in entry):
            raise UsageError(f"{where}: needs exactly one of 'wav' or 'synth'")
        extra = sorted(set(entry) - {"wav", "synth", "global_class", "local_features"})
        if extra:
            raise UsageError(f"{where}: unknown field(s) {', '.join(extra)}")
        for key in ("wav", "local_features"):
            if key in entry and not (base / entry[key]).is_file():
                raise UsageError(f"{where}.{key}: file not found: {base / entry[key]}")
        if "synth" in entry:
            _build(SyntheticSpec, entry["synth"], f"{where}.synth")
        if model.global_cond_dim is not None:
            k = entry.get("global_class")
            if not isinstance(k, int) or not 0 <= k < model.global_cond_dim:
                raise UsageError(f"{where}.global_class: must be an integer in [0, {model.global_cond_dim})")
        if model.local_cond is not None and "local_features" not in entry:
            raise UsageError(f"{where}.local_features: required by model.local_cond")
    return RunConfig(model, tcfg, data, str(raw.get("output_dir", "runs/default")), base)


def load_clips(rc: RunConfig) -> list[Clip]:
    clips = []
    for i, entry in enumerate(rc.data):
        if "wav" in entry:
            wave = read_wav(rc.base_dir / entry["wav"])
        else:
            wave = synth(_build(SyntheticSpec, entry["synth"], f"data[{i}].synth"))
        gv = None
        if rc.model.global_cond_dim is not None:
            gv = one_hot(entry["global_class"], rc.model.global_cond_dim)
        ls = None
        if "local_features" in entry:
            ls = np.load(rc.base_dir / entry["local_features"])
        clips.append(Clip(codec.quantize(wave).classes, gv, ls))
    return clips


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["max_steps"] = args.steps
    if overrides:
        rc.train = TrainConfig(**{**rc.train.__dict__, **overrides})
    out = Path(args.out) if args.out else rc.base_dir / rc.output_dir
    model = WaveNetModel(rc.model, seed=rc.train.seed)
    clips = load_clips(rc)

    def log(rec):
        if args.verbose:
            print(json.dumps(rec), flush=True)

    report = train(model, clips, rc.train, out_dir=out, log=log)
    print(f"final_loss {report.train_nll[-1]!r}")
    print(f"checkpoint {report.checkpoint_path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    gv = ls = None
    if cfg.global_cond_dim is not None:
        if args.global_class is None:
            raise UsageError(f"model is globally conditioned; pass --global-class in [0, {cfg.global_cond_dim})")
        if not 0 <= args.global_class < cfg.global_cond_dim:
            raise UsageError(f"--global-class {args.global_class} outside [0, {cfg.global_cond_dim})")
        gv = one_hot(args.global_class, cfg.global_cond_dim)
    elif args.global_class is not None:
        raise UsageError("--global-class given but the model has no global conditioning")
    if cfg.local_cond is not None:
        if args.local_features is None:
            raise UsageError("model is locally conditioned; pass --local-features")
        ls = np.load(args.local_features)
    request = GenerationRequest(args.samples, ConditioningInput(gv, ls), args.temperature,
                                args.mode, args.seed, sample_rate_hz=args.sample_rate)
    wave, nll = generate_with_nll(model, request)
    write_wav(codec.dequantize(wave), args.out)
    print(f"mean_nll {nll:.6f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def reference_model_config() -> ModelConfig:
    """The two-layer, 4-channel model used by gradient checks."""
    from .model import LocalCondConfig
    return ModelConfig(
        num_classes=256, residual_channels=4, skip_channels=4, filter_width=2,
        dilation_schedule=(1, 2), global_cond_dim=2,
        local_cond=LocalCondConfig(dim=2, upsample_factor=4, mode="transposed"),
        classifier=ClassifierConfig(num_labels=2, pool_factor=8),
    )


def reference_batch(config: ModelConfig, T: int = 32, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    x = rng.integers(config.num_classes, size=(1, T + 1))
    gv = rng.normal(size=(1, config.global_cond_dim)) if config.global_cond_dim else None
    ls = None
    if config.local_cond is not None:
        ls = rng.normal(size=(1, T // config.local_cond.upsample_factor, config.local_cond.dim))
    labels = None
    if config.classifier is not None:
        labels = rng.integers(config.classifier.num_labels, size=(1, T // config.classifier.pool_factor))
    return Batch(x[:, :-1], x[:, 1:], ConditioningInput(gv, ls), labels)


def cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config).model if args.config else reference_model_config()
    model = WaveNetModel(cfg, init_params(cfg, args.seed, np.float64, neutral=False))
    report = gradient_check(model, reference_batch(cfg, args.length, args.seed), args.tolerance)
    for group, err in sorted(report.errors.items()):
        print(f"{group:24s} {err:.3e} {'PASS' if err < args.tolerance else 'FAIL'}")
    print(f"gradcheck max_rel_error {report.max_error:.3e} {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_probe_rf(args) -> int:
    if args.config:
        cfg = load_run_config(args.config).model
    else:
        cfg = ModelConfig(residual_channels=8, skip_channels=8,
                          dilation_schedule=doubling_schedule(args.max_dilation, args.repeats))
    if cfg.global_cond_dim or cfg.local_cond or cfg.context_stacks:
        raise UsageError("probe-rf supports unconditioned models without context stacks")
    model = WaveNetModel(cfg, init_params(cfg, args.seed, np.float64, neutral=False))
    analytic = receptive_field(cfg)
    probed = probe_receptive_field(model, seed=args.seed)
    ok = analytic == probed
    print(f"receptive_field {analytic}")
    print(f"probed {probed} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_codec_roundtrip(args) -> int:
    params = codec.CompandingParams(args.mu, args.mu + 1)
    sweep = codec.roundtrip_sweep(args.points, params)
    n = np.arange(16000)
    sine = np.sin(2 * np.pi * 440 * n / 16000)
    sine_err = float(np.max(np.abs(codec.dequantize_array(codec.quantize_array(sine, params), params) - sine)))
    checks = [
        ("compand_roundtrip", sweep["compand_roundtrip"], 1e-6),
        ("sine_quantize_roundtrip", sine_err, 0.04),
    ]
    ok = True
    for name, err, bound in checks:
        passed = err <= bound if name == "compand_roundtrip" else err < bound
        ok &= passed
        print(f"{name} max_error {err:.3e} bound {bound:g} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavenet", description="Train, sample, and verify WaveNet models.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a YAML run config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--out", help="output directory (overrides output_dir)")
    t.add_argument("--verbose", action="store_true", help="print one JSON record per step")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample audio from a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--samples", type=int, default=16000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--global-class", type=int)
    g.add_argument("--local-features", help=".npy array (frames, dim)")
    g.add_argument("--temperature", type=float, default=1.0)
    g.add_argument("--mode", choices=("sample", "argmax"), default="sample")
    g.add_argument("--sample-rate", type=int, default=16000)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check")
    c.add_argument("--config")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--length", type=int, default=32)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("probe-rf", help="compare analytic and probed receptive field")
    r.add_argument("--config")
    r.add_argument("--max-dilation", type=int, default=512)
    r.add_argument("--repeats", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_probe_rf)

    k = sub.add_parser("codec-roundtrip", help="mu-law round-trip sweep")
    k.add_argument("--mu", type=int, default=255)
    k.add_argument("--points", type=int, default=10_001)
    k.set_defaults(func=cmd_codec_roundtrip)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WaveNetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
