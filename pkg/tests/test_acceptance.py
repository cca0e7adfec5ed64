"""Exit criteria. Each test prints one PASS/FAIL line (also repeated in the terminal summary)."""

import time

import numpy as np
import pytest

from wavenet import codec
from wavenet import experiments as E
from wavenet import tensor_ops as ops
from wavenet.cli import reference_batch, reference_model_config
from wavenet.model import (
    ConditioningInput,
    ContextStackConfig,
    LocalCondConfig,
    ModelConfig,
    WaveNetModel,
    doubling_schedule,
    init_params,
    load_checkpoint,
    probe_receptive_field,
    receptive_field,
    save_checkpoint,
)
from wavenet.sampler import GenerationRequest, generate, init_state, step
from wavenet.training import Clip, TrainConfig, gradient_check, train

from conftest import ACCEPTANCE_LINES


def report(number, name, passed, detail):
    line = f"[{number:2d}] {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def random_config(rng):
    schedule = tuple(int(d) for d in rng.choice([1, 2, 3, 4, 8], size=rng.integers(1, 5)))
    kw = {}
    if rng.random() < 0.3:
        kw["global_cond_dim"] = 2
    if rng.random() < 0.3:
        kw["context_stacks"] = (ContextStackConfig((1, 2), 3, int(rng.integers(1, 5))),)
    return ModelConfig(num_classes=16, residual_channels=int(rng.integers(2, 6)), skip_channels=4,
                       filter_width=int(rng.integers(1, 4)), dilation_schedule=schedule, **kw)


def test_1_causality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = 0
    for trial in range(50):
        cfg = random_config(rng)
        m = WaveNetModel(cfg, init_params(cfg, trial, np.float32, neutral=False))
        T = int(rng.integers(8, 64))
        x = rng.integers(16, size=T)
        t = int(rng.integers(0, T))
        cond = ConditioningInput(rng.normal(size=2)) if cfg.global_cond_dim else None
        y = x.copy()
        y[t:] = rng.integers(16, size=T - t)
        if not np.array_equal(m.forward(x, cond)[:t], m.forward(y, cond)[:t]):
            failures += 1
    dt = time.perf_counter() - t0
    report(1, "causality", failures == 0 and dt < 60, f"{50 - failures}/50 bit-identical, {dt:.1f}s")


def test_2_receptive_field():
    t0 = time.perf_counter()
    undilated = receptive_field(ModelConfig(dilation_schedule=(1, 1, 1, 1)))
    block = receptive_field(ModelConfig(dilation_schedule=doubling_schedule(512)))
    rng = np.random.default_rng(7)
    probes = []
    for k in range(3):
        cfg = ModelConfig(num_classes=32, residual_channels=8, skip_channels=8,
                          filter_width=int(rng.integers(2, 4)),
                          dilation_schedule=tuple(int(d) for d in rng.choice([1, 2, 3, 4, 6], size=3)))
        probes.append((probe_receptive_field(WaveNetModel(cfg, init_params(cfg, k, np.float64, neutral=False))),
                       receptive_field(cfg)))
    dt = time.perf_counter() - t0
    ok = undilated == 5 and block == 1024 and all(p == a for p, a in probes) and dt < 120
    report(2, "receptive field", ok, f"undilated {undilated}, 1..512 block {block}, probed/analytic {probes}, {dt:.1f}s")


def test_3_gradients():
    t0 = time.perf_counter()
    cfg = reference_model_config()
    m = WaveNetModel(cfg, init_params(cfg, 0, np.float64, neutral=False))
    rep = gradient_check(m, reference_batch(cfg, T=32), tolerance=1e-4)
    needed = {"filter.w", "gate.w", "res.w", "skip.w", "global_filter.w", "global_gate.w",
              "local_filter.w", "local_gate.w", "upsample.w", "cls1.w", "cls2.w"}
    dt = time.perf_counter() - t0
    ok = rep.passed and needed <= set(rep.errors) and dt < 300
    report(3, "gradient check", ok, f"max relative error {rep.max_error:.2e} over {len(rep.errors)} groups, {dt:.1f}s")


def test_4_codec():
    t0 = time.perf_counter()
    x = np.linspace(-1, 1, 10_001)
    rt = float(np.max(np.abs(codec.mulaw_expand(codec.mulaw_compand(x)) - x)))
    n = np.arange(16000)
    sine = np.sin(2 * np.pi * 440 * n / 16000)
    qerr = float(np.max(np.abs(codec.dequantize_array(codec.quantize_array(sine)) - sine)))
    exact = (codec.mulaw_compand(0.0) == 0.0 and codec.mulaw_compand(1.0) == 1.0
             and codec.mulaw_compand(-1.0) == -1.0)
    dt = time.perf_counter() - t0
    report(4, "codec", rt <= 1e-6 and qerr < 0.04 and exact and dt < 10,
           f"round trip {rt:.1e}, sine quantization {qerr:.4f}, {dt:.2f}s")


def test_5_sampler_equivalence_and_flat_cost():
    t0 = time.perf_counter()
    cfg = E.sine_model_config()
    m = WaveNetModel(cfg, init_params(cfg, 3, np.float32, neutral=False))
    wave = generate(m, GenerationRequest(64, seed=1))
    history = np.concatenate([[cfg.num_classes // 2], wave.classes[:-1]])
    batch = ops.softmax(m.forward(history).astype(np.float64))
    state = init_state(m, GenerationRequest(1))
    err = 0.0
    for t, c in enumerate(history):
        dist, _ = step(m, state, int(c))
        err = max(err, float(np.max(np.abs(dist - batch[t]))))

    state = init_state(m, GenerationRequest(1))
    times = np.empty(10_100)
    rng = np.random.default_rng(0)
    classes = rng.integers(256, size=len(times))
    for n, c in enumerate(classes):
        s = time.perf_counter()
        step(m, state, int(c))
        times[n] = time.perf_counter() - s
    early = float(np.median(times[50:150]))
    late = float(np.median(times[9_950:10_050]))
    ratio = max(early, late) / min(early, late)
    dt = time.perf_counter() - t0
    report(5, "sampler equivalence", err < 1e-5 and ratio < 2 and dt < 120,
           f"max |incremental - batch| {err:.1e}, step cost ratio 10k/100 {late / early:.2f}, {dt:.1f}s")


@pytest.mark.slow
def test_6_overfit_and_regenerate():
    res = E.overfit_sine(steps=600, seed=0, gen_seeds=(0,))
    peak = res["peaks"][0]
    ok = res["train_nll_final"] < 0.5 and abs(peak - res["expected_bin"]) <= 2 and res["seconds"] < 1800
    report(6, "overfit sine", ok,
           f"train NLL {res['train_nll_final']:.3f}, peak bin {peak} vs {res['expected_bin']:.2f}, {res['seconds']:.0f}s")


@pytest.mark.slow
def test_7_conditioning_discrimination():
    res = E.conditioning_discrimination(steps=5000, seed=0, runs=10)
    ok = all(h >= 9 for h in res["hits"].values()) and res["seconds"] < 2700
    report(7, "global conditioning", ok, f"hits per class {res['hits']} of 10, {res['seconds']:.0f}s")


@pytest.mark.slow
def test_8_entropy_rate():
    res = E.entropy_rate_check(steps=1000, seed=0)
    H = res["entropy_rate"]
    vals = [v for _, v in res["val_nll"]]
    final = res["final_val_nll"]
    ok = H - 0.05 <= final <= H + 0.3 and min(vals) >= H - 0.05 and res["seconds"] < 1200
    report(8, "entropy rate", ok, f"H {H:.4f}, final validation NLL {final:.4f}, {res['seconds']:.0f}s")


@pytest.mark.slow
def test_9_dual_loss():
    res = E.dual_loss_liveness(steps=600, seed=0)
    ok = res["frame_accuracy"] > 0.95 and res["final_nll"] < res["init_nll"] and res["seconds"] < 1800
    report(9, "dual loss", ok, f"frame accuracy {res['frame_accuracy']:.3f}, "
                               f"NLL {res['init_nll']:.3f} -> {res['final_nll']:.3f}, {res['seconds']:.0f}s")


def test_10_determinism_and_persistence(tmp_path):
    from wavenet.audio_io import SyntheticSpec, synth
    clip = Clip(codec.quantize(synth(SyntheticSpec("sine", 440, 0.5, 0.25))).classes,
                local_series=None)
    cfg = ModelConfig(residual_channels=8, skip_channels=16, dilation_schedule=doubling_schedule(16))
    runs = []
    for k in range(2):
        m = WaveNetModel(cfg, seed=0)
        rep = train(m, [clip], TrainConfig(segment_length=64, batch_segments=2, max_steps=30, seed=5),
                    out_dir=tmp_path / f"r{k}")
        wave = generate(m, GenerationRequest(500, seed=9))
        runs.append((rep.train_nll, (tmp_path / f"r{k}" / "model.ckpt").read_bytes(), wave.classes))
    same_run = runs[0][0] == runs[1][0] and runs[0][1] == runs[1][1] and np.array_equal(runs[0][2], runs[1][2])

    m = load_checkpoint(tmp_path / "r0" / "model.ckpt")
    save_checkpoint(m, tmp_path / "copy.ckpt")
    m2 = load_checkpoint(tmp_path / "copy.ckpt")
    x = clip.classes[:400]
    persisted = np.array_equal(m.forward(x), m2.forward(x)) and \
        (tmp_path / "copy.ckpt").read_bytes() == runs[0][1]
    report(10, "determinism and persistence", same_run and persisted,
           f"same-seed reruns identical: {same_run}, checkpoint forward bit-exact: {persisted}")
