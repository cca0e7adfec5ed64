"""Teacher-forced maximum-likelihood training, Adam, and gradient checking.

Losses are in nats per sample; divide by ln 2 for bits.
"""

from __future__ import annotations

import json
import math
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_ops as ops
from .errors import ConfigError, DataError, ShapeError, StateError, TrainingAborted
from .model import ConditioningInput, WaveNetModel, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_segments: int = 4
    segment_length: int = 1024
    max_steps: int = 1000
    seed: int = 0
    classifier_loss_weight: float = 0.0
    validation_fraction: float = 0.0
    validation_every: int = 100

    def __post_init__(self):
        if self.batch_segments < 1:
            raise ConfigError(f"batch_segments must be >= 1, got {self.batch_segments}")
        if self.segment_length < 1 or self.max_steps < 0:
            raise ConfigError("segment_length must be >= 1 and max_steps >= 0")
        if not 0.0 <= self.classifier_loss_weight <= 1.0:
            raise ConfigError(f"classifier_loss_weight must lie in [0, 1], got {self.classifier_loss_weight}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.validation_every < 1:
            raise ConfigError("validation_every must be >= 1")


@dataclass
class Clip:
    """One training waveform with whatever conditioning the model expects."""
    classes: np.ndarray
    global_vec: np.ndarray | None = None
    local_series: np.ndarray | None = None
    frame_labels: np.ndarray | None = None


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    cond: ConditioningInput
    frame_labels: np.ndarray | None = None


@dataclass
class TrainReport:
    records: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None

    @property
    def train_nll(self) -> list[float]:
        return [r["loss"] for r in self.records]

    @property
    def val_nll(self) -> list[tuple[int, float]]:
        return [(r["step"], r["val_loss"]) for r in self.records if r.get("val_loss") is not None]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def nll_loss(logits, targets, mask=None) -> float:
    """Mean next-sample NLL in nats; ``targets`` are the inputs shifted left by one."""
    targets = np.asarray(targets)
    if targets.shape != np.shape(logits)[:-1]:
        raise ShapeError(f"targets shape {targets.shape} misaligned with logits {np.shape(logits)}")
    return ops.softmax_xent(logits, targets, mask)[0]


def dual_loss(next_sample_nll: float, frame_xent: float, weight: float) -> float:
    if not 0.0 <= weight <= 1.0:
        raise ConfigError(f"loss weight must lie in [0, 1], got {weight}")
    return (1.0 - weight) * next_sample_nll + weight * frame_xent


# --- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                state: AdamState, config: TrainConfig) -> None:
    """In-place bias-corrected Adam step."""
    if state.m.keys() != params.keys() or grads.keys() != params.keys():
        raise StateError("optimizer state, gradients, and parameters have different names")
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise StateError(f"shape drift on {name}: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = (config.learning_rate / c1) * m / (np.sqrt(v / c2) + config.adam_eps)
        p -= step.astype(p.dtype)


# --- data --------------------------------------------------------------------

def split_clips(clips: list[Clip], fraction: float, seed: int):
    """Split whole clips into (train, validation); validation is empty when fraction is 0."""
    n = len(clips)
    if fraction <= 0 or n < 2:
        return list(clips), []
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    val = set(order[:n_val].tolist())
    return [c for i, c in enumerate(clips) if i not in val], [c for i, c in enumerate(clips) if i in val]


def _alignment(model: WaveNetModel) -> int:
    cfg = model.config
    a = 1
    if cfg.local_cond is not None:
        a = math.lcm(a, cfg.local_cond.upsample_factor)
    if cfg.classifier is not None:
        a = math.lcm(a, cfg.classifier.pool_factor)
    return a


def sample_batch(model: WaveNetModel, clips: list[Clip], config: TrainConfig,
                 rng: np.random.Generator) -> Batch:
    """Random segments of ``segment_length`` inputs plus the following target sample.

    Offsets are multiples of the local upsampling factor and classifier pool
    factor so control-rate features and frame labels stay aligned.
    """
    cfg = model.config
    L = config.segment_length
    align = _alignment(model)
    if L % align:
        raise ConfigError(f"segment_length {L} must be a multiple of {align}")
    inputs, targets, gvs, lss, labels = [], [], [], [], []
    for _ in range(config.batch_segments):
        clip = clips[int(rng.integers(len(clips)))]
        n_off = (len(clip.classes) - L - 1) // align + 1
        if n_off < 1:
            raise DataError(f"clip of {len(clip.classes)} samples is shorter than segment_length + 1 = {L + 1}")
        o = int(rng.integers(n_off)) * align
        seg = clip.classes[o: o + L + 1]
        inputs.append(seg[:-1])
        targets.append(seg[1:])
        if cfg.global_cond_dim is not None:
            gvs.append(clip.global_vec)
        if cfg.local_cond is not None:
            f = cfg.local_cond.upsample_factor
            lss.append(clip.local_series[o // f: (o + L) // f])
        if cfg.classifier is not None and clip.frame_labels is not None:
            P = cfg.classifier.pool_factor
            labels.append(clip.frame_labels[o // P: (o + L) // P])
    cond = ConditioningInput(np.stack(gvs) if gvs else None, np.stack(lss) if lss else None)
    frame_labels = np.stack(labels) if len(labels) == len(inputs) and labels else None
    return Batch(np.stack(inputs), np.stack(targets), cond, frame_labels)


def clip_batch(clip: Clip) -> Batch:
    """The whole clip as one teacher-forced example."""
    gv = None if clip.global_vec is None else np.asarray(clip.global_vec)[None]
    ls = None
    if clip.local_series is not None:
        ls = np.asarray(clip.local_series)[None]
    return Batch(clip.classes[None, :-1], clip.classes[None, 1:], ConditioningInput(gv, ls), None)


# --- loss evaluation ---------------------------------------------------------

def batch_loss(model: WaveNetModel, batch: Batch, weight: float = 0.0,
               tape: ops.GradientTape | None = None):
    """Forward (and, with a tape, backward) on one batch.

    Returns ``(total, nll, frame_xent)``; ``frame_xent`` is None without a classifier loss.
    """
    use_cls = model.config.classifier is not None and batch.frame_labels is not None and weight > 0
    if use_cls:
        frame_logits, logits = model.classify_frames(batch.inputs, batch.cond, tape=tape)
        nll, g = ops.softmax_xent(logits, batch.targets)
        xent, gf = ops.softmax_xent(frame_logits, batch.frame_labels)
        total = dual_loss(nll, xent, weight)
        if tape is not None:
            model.backward(tape, (1.0 - weight) * g, weight * gf)
        return total, nll, xent
    logits = model.forward(batch.inputs, batch.cond, tape=tape)
    nll, g = ops.softmax_xent(logits, batch.targets)
    if tape is not None:
        model.backward(tape, g)
    return nll, nll, None


def evaluate_nll(model: WaveNetModel, clips: list[Clip]) -> float:
    """Sample-weighted mean next-sample NLL over whole clips."""
    total, count = 0.0, 0
    for clip in clips:
        b = clip_batch(clip)
        total += nll_loss(model.forward(b.inputs, b.cond), b.targets) * b.targets.size
        count += b.targets.size
    if count == 0:
        raise DataError("no samples to evaluate")
    return total / count


def frame_accuracy(model: WaveNetModel, clips: list[Clip]) -> float:
    correct = total = 0
    for clip in clips:
        b = clip_batch(clip)
        frame_logits, _ = model.classify_frames(b.inputs, b.cond)
        n = frame_logits.shape[1]
        correct += int(np.sum(frame_logits[0].argmax(-1) == clip.frame_labels[:n]))
        total += n
    return correct / max(total, 1)


# --- training loop -----------------------------------------------------------

def train(model: WaveNetModel, clips: list[Clip], config: TrainConfig,
          out_dir=None, log=None) -> TrainReport:
    """Run ``config.max_steps`` Adam steps on random segments; mutates ``model`` in place."""
    rf = model.receptive_field
    if config.segment_length < rf:
        raise ConfigError(f"segment_length {config.segment_length} < receptive field {rf}")
    if not clips:
        raise DataError("no training clips")
    train_clips, val_clips = split_clips(clips, config.validation_fraction, config.seed)
    rng = np.random.default_rng(config.seed)
    tape = model.new_tape()
    adam = AdamState.zeros_like(model.params)
    report = TrainReport()
    for step in range(1, config.max_steps + 1):
        t0 = time.perf_counter()
        batch = sample_batch(model, train_clips, config, rng)
        loss, nll, xent = batch_loss(model, batch, config.classifier_loss_weight, tape)
        if not math.isfinite(loss):
            norms = {k: float(np.linalg.norm(p)) for k, p in model.params.items()}
            raise TrainingAborted(f"non-finite loss {loss} at step {step}; parameter norms {norms}")
        adam_update(model.params, tape.grads, adam, config)
        rec = {"step": step, "loss": nll, "seconds": time.perf_counter() - t0}
        if xent is not None:
            rec["frame_loss"] = xent
        if val_clips and (step % config.validation_every == 0 or step == config.max_steps):
            rec["val_loss"] = evaluate_nll(model, val_clips)
        report.records.append(rec)
        if log is not None:
            log(rec)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "model.ckpt"
        save_checkpoint(model, ckpt)
        report.checkpoint_path = str(ckpt)
        report.write_jsonl(out / "train_report.jsonl")
    return report


# --- gradient checking -------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_dict(self) -> dict:
        return asdict(self) | {"passed": self.passed, "max_error": self.max_error}


def param_group(name: str) -> str:
    """Drop layer/stack indices: ``layer3.filter.w`` -> ``filter.w``, ``ctx0.layer1.gate.b`` -> ``ctx.gate.b``."""
    return re.sub(r"ctx\d+", "ctx", re.sub(r"layer\d+\.", "", name))


def analytic_gradients(model: WaveNetModel, batch: Batch, weight: float = 0.0) -> dict[str, np.ndarray]:
    tape = model.new_tape()
    batch_loss(model, batch, weight, tape)
    return tape.grads


def numeric_gradients(model: WaveNetModel, batch: Batch, weight: float = 0.0,
                      eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences, one parameter entry at a time."""
    out = {}
    for name, p in model.params.items():
        g = np.zeros(p.shape, dtype=np.float64)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = batch_loss(model, batch, weight)[0]
            flat[i] = orig - eps
            down = batch_loss(model, batch, weight)[0]
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def compare_gradients(analytic: dict, numeric: dict, tolerance: float = 1e-4) -> GradCheckReport:
    """Per-group error ``max|a - n| / max(max|a|, max|n|)`` (0 when both vanish)."""
    groups: dict[str, list[str]] = {}
    for name in numeric:
        groups.setdefault(param_group(name), []).append(name)
    errors = {}
    for group, names in groups.items():
        err = 0.0
        for name in names:
            a, n = np.asarray(analytic[name], np.float64), np.asarray(numeric[name], np.float64)
            scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
            if scale > 0:
                err = max(err, float(np.max(np.abs(a - n)) / scale))
        errors[group] = err
    return GradCheckReport(errors, tolerance)


def gradient_check(model: WaveNetModel, batch: Batch, tolerance: float = 1e-4,
                   weight: float | None = None, eps: float = 1e-5) -> GradCheckReport:
    """Finite-difference check in float64 on a copy of ``model``."""
    m = model.astype(np.float64)
    if weight is None:
        weight = 0.5 if (m.config.classifier is not None and batch.frame_labels is not None) else 0.0
    return compare_gradients(analytic_gradients(m, batch, weight), numeric_gradients(m, batch, weight, eps), tolerance)
