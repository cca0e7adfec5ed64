"""Desk-scale end-to-end experiments shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import time

import numpy as np

from . import codec
from .audio_io import SyntheticSpec, labeled_tones, markov_entropy_rate, synth
from .model import ClassifierConfig, ConditioningInput, ModelConfig, WaveNetModel, doubling_schedule, one_hot
from .sampler import GenerationRequest, generate
from .training import Clip, TrainConfig, evaluate_nll, frame_accuracy, train

RATE = 16000
WINDOW = 4096


def peak_bin(samples, window: int = WINDOW) -> int:
    """Dominant non-DC rfft bin of the first ``window`` samples (Hann-windowed)."""
    x = np.asarray(samples[:window], dtype=np.float64)
    x = x - x.mean()
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return int(np.argmax(spec[1:]) + 1)


def expected_bin(freq_hz: float, rate: int = RATE, window: int = WINDOW) -> float:
    return freq_hz * window / rate


def sine_model_config(**kw) -> ModelConfig:
    """Two 1..64 dilation blocks, 32 residual channels."""
    base = dict(residual_channels=32, skip_channels=64, dilation_schedule=doubling_schedule(64, 2))
    return ModelConfig(**(base | kw))


def overfit_sine(steps: int = 600, seed: int = 0, freq: float = 440.0, amplitude: float = 0.5,
                 gen_seeds=(0,), log=None) -> dict:
    t0 = time.perf_counter()
    clip = Clip(codec.quantize(synth(SyntheticSpec("sine", freq, amplitude, 2.0))).classes)
    model = WaveNetModel(sine_model_config(), seed=seed)
    tc = TrainConfig(batch_segments=4, segment_length=512, max_steps=steps, seed=seed)
    report = train(model, [clip], tc, log=log)
    nll = evaluate_nll(model, [clip])
    peaks = []
    for s in gen_seeds:
        wave = generate(model, GenerationRequest(WINDOW, seed=s))
        peaks.append(peak_bin(codec.dequantize(wave).samples))
    return {
        "train_nll_final": float(np.mean(report.train_nll[-20:])),
        "clip_nll": nll,
        "peaks": peaks,
        "expected_bin": expected_bin(freq),
        "seconds": time.perf_counter() - t0,
        "model": model,
    }


def conditioning_discrimination(steps: int = 5000, seed: int = 0, freqs=(440.0, 660.0),
                                runs: int = 10, log=None) -> dict:
    t0 = time.perf_counter()
    n = len(freqs)
    clips = [
        Clip(codec.quantize(synth(SyntheticSpec("sine", f, 0.5, 2.0))).classes, one_hot(k, n))
        for k, f in enumerate(freqs)
    ]
    model = WaveNetModel(sine_model_config(global_cond_dim=n), seed=seed)
    tc = TrainConfig(batch_segments=4, segment_length=512, max_steps=steps, seed=seed)
    report = train(model, clips, tc, log=log)
    hits = {}
    peaks = {}
    for k, f in enumerate(freqs):
        got = []
        for r in range(runs):
            req = GenerationRequest(WINDOW, ConditioningInput(one_hot(k, n)), seed=1000 * k + r)
            got.append(peak_bin(codec.dequantize(generate(model, req)).samples))
        peaks[f] = got
        hits[f] = sum(abs(p - expected_bin(f)) <= 2 for p in got)
    return {"hits": hits, "peaks": peaks, "runs": runs, "train_nll_final": float(np.mean(report.train_nll[-20:])),
            "seconds": time.perf_counter() - t0, "model": model}


def entropy_rate_check(steps: int = 1000, seed: int = 0, num_clips: int = 10, log=None) -> dict:
    t0 = time.perf_counter()
    spec = SyntheticSpec("markov_noise", amplitude=0.5, duration_s=0.5)
    H = markov_entropy_rate(spec.transition)
    clips = [
        Clip(codec.quantize(synth(SyntheticSpec("markov_noise", amplitude=0.5, duration_s=0.5, seed=seed + i))).classes)
        for i in range(num_clips)
    ]
    model = WaveNetModel(ModelConfig(residual_channels=16, skip_channels=32, dilation_schedule=(1, 2, 4, 8)),
                         seed=seed)
    tc = TrainConfig(batch_segments=4, segment_length=512, max_steps=steps, seed=seed,
                     validation_fraction=0.2, validation_every=max(steps // 10, 1))
    report = train(model, clips, tc, log=log)
    return {"entropy_rate": H, "val_nll": report.val_nll, "final_val_nll": report.val_nll[-1][1],
            "seconds": time.perf_counter() - t0, "model": model}


def dual_loss_liveness(steps: int = 600, seed: int = 0, freqs=(440.0, 660.0), weight: float = 0.5,
                       log=None) -> dict:
    t0 = time.perf_counter()
    P = 160
    clips = []
    for i in range(5):
        wave, labels = labeled_tones(freqs, 0.5, num_frames=100, frame_length=P, run_frames=4,
                                     sample_rate_hz=RATE, seed=seed + i)
        # one extra sample so the whole clip yields exactly 100 input frames
        classes = np.append(codec.quantize(wave).classes, codec.quantize_array(0.0))
        clips.append(Clip(classes, frame_labels=labels))
    train_clips, val_clips = clips[:4], clips[4:]
    cfg = ModelConfig(residual_channels=16, skip_channels=32, dilation_schedule=doubling_schedule(32),
                      classifier=ClassifierConfig(len(freqs), P))
    model = WaveNetModel(cfg, seed=seed)
    init_nll = evaluate_nll(model, val_clips)
    tc = TrainConfig(batch_segments=4, segment_length=8 * P, max_steps=steps, seed=seed,
                     classifier_loss_weight=weight)
    report = train(model, train_clips, tc, log=log)
    return {"init_nll": init_nll, "final_nll": evaluate_nll(model, val_clips),
            "frame_accuracy": frame_accuracy(model, val_clips),
            "train_frame_accuracy": frame_accuracy(model, train_clips),
            "train_nll_final": float(np.mean(report.train_nll[-20:])),
            "seconds": time.perf_counter() - t0, "model": model}
