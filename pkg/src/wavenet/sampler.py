"""Incremental autoregressive sampling with per-layer ring buffers.

Each dilated layer keeps the last ``dilation * (filter_width - 1)`` inputs it
has seen (the previous block's post-residual output), so producing one sample
costs a fixed number of small matrix-vector products no matter how long the
history is. Buffers start zeroed, which matches the left zero-padding of the
batch forward pass.

Random draws use numpy's PCG64 generator seeded with the request seed. A
categorical draw takes ``u = rng.random()`` (one float64 in [0, 1)) and returns
the first class whose cumulative probability exceeds ``u * total``.

Unprimed generation first feeds the silence class ``num_classes // 2`` (the
quantized value of 0.0); that seed class is not part of the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_ops as ops
from .codec import QuantizedWaveform
from .errors import ConfigError, DataError
from .model import ConditioningInput, WaveNetModel


@dataclass
class GenerationRequest:
    num_samples: int
    conditioning: ConditioningInput = field(default_factory=ConditioningInput)
    temperature: float = 1.0
    mode: str = "sample"  # or "argmax"
    seed: int = 0
    primer: QuantizedWaveform | None = None
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError(f"num_samples must be >= 1, got {self.num_samples}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.mode not in ("sample", "argmax"):
            raise ConfigError(f"mode must be 'sample' or 'argmax', got {self.mode!r}")


class RingBuffer:
    """Fixed-capacity history of row vectors, indexed by steps back."""

    def __init__(self, capacity: int, channels: int, dtype):
        self.capacity = capacity
        self.data = np.zeros((max(capacity, 1), channels), dtype)
        self.pos = 0  # slot for the next write
        self.reads = 0

    def back(self, steps: int) -> np.ndarray:
        """Row written ``steps`` pushes ago, 1 <= steps <= capacity."""
        self.reads += 1
        return self.data[(self.pos - steps) % self.capacity]

    def push(self, row):
        if self.capacity:
            self.data[self.pos] = row
            self.pos = (self.pos + 1) % self.capacity


class _Layer:
    """Pre-fused weights for one gated residual layer."""

    def __init__(self, model, pre, d, F, extra):
        P = model.params
        self.d, self.F = d, F
        self.w_fg = [np.concatenate([P[pre + ".filter.w"][i], P[pre + ".gate.w"][i]], axis=1) for i in range(F)]
        self.b_fg = np.concatenate([P[pre + ".filter.b"], P[pre + ".gate.b"]])
        self.extra = extra  # list of (name, weight (C, 2R), bias (2R,))
        self.R = P[pre + ".filter.b"].shape[0]

    def pre_activation(self, h, buf: RingBuffer):
        out = self.b_fg + h @ self.w_fg[self.F - 1]
        for i in range(self.F - 1):
            out = out + buf.back(self.d * (self.F - 1 - i)) @ self.w_fg[i]
        return out


def _fused_1x1(P, pre, a, b):
    w = np.concatenate([P[f"{pre}.{a}.w"][0], P[f"{pre}.{b}.w"][0]], axis=1)
    bias = np.concatenate([P[f"{pre}.{a}.b"], P[f"{pre}.{b}.b"]])
    return w, bias


class _ContextStack:
    def __init__(self, model, i, cs, F, dtype):
        P = model.params
        self.p = cs.pool_factor
        self.embed = P[f"ctx{i}.embed.w"][0]
        self.embed_b = P[f"ctx{i}.embed.b"]
        self.layers = []
        self.res = []
        self.buffers = []
        for j, d in enumerate(cs.dilation_schedule):
            pre = f"ctx{i}.layer{j}"
            self.layers.append(_Layer(model, pre, d, F, []))
            self.res.append((P[pre + ".res.w"][0], P[pre + ".res.b"]))
            self.buffers.append(RingBuffer(d * (F - 1), cs.channels, dtype))
        self.acc = np.zeros(cs.channels, dtype)
        self.count = 0
        self.out = np.zeros(cs.channels, dtype)

    def push(self, cls):
        self.acc = self.acc + (self.embed[cls] + self.embed_b)
        self.count += 1
        if self.count < self.p:
            return
        h = self.acc / self.p
        self.acc = np.zeros_like(self.acc)
        self.count = 0
        for layer, (rw, rb), buf in zip(self.layers, self.res, self.buffers):
            fg = layer.pre_activation(h, buf)
            z = ops.gated_activation(fg[: layer.R], fg[layer.R:])
            buf.push(h)
            h = h + (z @ rw + rb)
        self.out = h


@dataclass
class SamplerState:
    t: int
    buffers: list
    layers: list
    contexts: list
    global_terms: list
    local_y: np.ndarray | None
    rng: np.random.Generator
    dist: np.ndarray | None = None


def _check_class(model, c):
    if not 0 <= int(c) < model.config.num_classes:
        raise DataError(f"class {c} outside [0, {model.config.num_classes - 1}]")


def init_state(model: WaveNetModel, request: GenerationRequest) -> SamplerState:
    cfg = model.config
    cond = request.conditioning or ConditioningInput()
    dtype = model.dtype
    P = model.params
    F, R = cfg.filter_width, cfg.residual_channels

    gv = None
    if cfg.global_cond_dim is None:
        if cond.global_vec is not None:
            raise ConfigError("model has no global conditioning but a global vector was given")
    else:
        if cond.global_vec is None:
            raise ConfigError(f"model expects a global conditioning vector of dim {cfg.global_cond_dim}")
        gv = np.asarray(cond.global_vec, dtype=dtype)
        if gv.shape != (cfg.global_cond_dim,):
            raise ConfigError(f"global vector shape {gv.shape} does not match dim {cfg.global_cond_dim}")

    total_inputs = (len(request.primer) if request.primer is not None else 1) + request.num_samples - 1
    y = None
    lc = cfg.local_cond
    if lc is None:
        if cond.local_series is not None:
            raise ConfigError("model has no local conditioning but a local series was given")
    else:
        if cond.local_series is None:
            raise ConfigError(f"model expects a local conditioning series of dim {lc.dim}")
        ls = np.asarray(cond.local_series, dtype=dtype)
        if ls.ndim != 2 or ls.shape[1] != lc.dim:
            raise ConfigError(f"local series shape {ls.shape} does not match dim {lc.dim}")
        if lc.mode == "transposed":
            y = ops.upsample_transposed(ls, model.kernel("upsample"), lc.upsample_factor)
        else:
            y = ops.repeat_upsample(ls, lc.upsample_factor)
        if y.shape[0] < total_inputs:
            raise ConfigError(
                f"local series covers {y.shape[0]} steps but generation needs {total_inputs}"
            )

    layers, buffers, global_terms = [], [], []
    for k, d in enumerate(cfg.dilation_schedule):
        pre = f"layer{k}"
        extra = []
        if lc is not None:
            extra.append(("local",) + _fused_1x1(P, pre, "local_filter", "local_gate"))
        for i in range(len(cfg.context_stacks)):
            extra.append((f"ctx{i}",) + _fused_1x1(P, pre, f"ctx{i}_filter", f"ctx{i}_gate"))
        layer = _Layer(model, pre, d, F, extra)
        layer.out_w, layer.out_b = _fused_1x1(P, pre, "res", "skip")
        layers.append(layer)
        buffers.append(RingBuffer(d * (F - 1), R, dtype))
        if gv is not None:
            w, b = _fused_1x1(P, pre, "global_filter", "global_gate")
            global_terms.append(gv @ w + b)
        else:
            global_terms.append(None)

    contexts = [_ContextStack(model, i, cs, F, dtype) for i, cs in enumerate(cfg.context_stacks)]
    state = SamplerState(0, buffers, layers, contexts, global_terms, y,
                         np.random.Generator(np.random.PCG64(request.seed)))
    if request.primer is not None:
        for c in request.primer.classes:
            step(model, state, int(c))
    return state


def step(model: WaveNetModel, state: SamplerState, prev_class: int):
    """Feed one class; return the next-class distribution (float64) and the advanced state."""
    _check_class(model, prev_class)
    P = model.params
    R = model.config.residual_channels
    t = state.t
    ctx_out = []
    for cs in state.contexts:
        cs.push(prev_class)
        ctx_out.append(cs.out)
    y_t = state.local_y[t] if state.local_y is not None else None

    h = P["embed.w"][0][prev_class] + P["embed.b"]
    skip = None
    for layer, buf, gterm in zip(state.layers, state.buffers, state.global_terms):
        fg = layer.pre_activation(h, buf)
        if gterm is not None:
            fg = fg + gterm
        for name, w, b in layer.extra:
            src = y_t if name == "local" else ctx_out[int(name[3:])]
            fg = fg + (src @ w + b)
        z = ops.gated_activation(fg[:R], fg[R:])
        out = z @ layer.out_w + layer.out_b
        buf.push(h)
        h = h + out[:R]
        skip = out[R:] if skip is None else skip + out[R:]

    a1 = ops.relu(skip)
    a2 = ops.relu(a1 @ P["head1.w"][0] + P["head1.b"])
    logits = a2 @ P["head2.w"][0] + P["head2.b"]
    dist = ops.softmax(logits.astype(np.float64))
    state.t = t + 1
    state.dist = dist
    return dist, state


def temperature_scale(distribution, temperature: float) -> np.ndarray:
    """``softmax(log p / temperature)``."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    p = np.asarray(distribution, dtype=np.float64)
    if temperature == 1.0:
        return p / p.sum()
    with np.errstate(divide="ignore"):
        logp = np.log(p) / temperature
    return ops.softmax(logp)


def draw(distribution, rng: np.random.Generator) -> int:
    """Inverse-CDF categorical draw using one uniform float64."""
    cdf = np.cumsum(distribution)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def generate_with_nll(model: WaveNetModel, request: GenerationRequest):
    """Return the generated waveform and its mean NLL (nats/sample) under the untempered model."""
    state = init_state(model, request)
    if state.dist is None:
        step(model, state, model.config.num_classes // 2)
    out = np.empty(request.num_samples, dtype=np.int64)
    nll = 0.0
    for n in range(request.num_samples):
        dist = state.dist
        if request.mode == "argmax":
            c = int(np.argmax(dist))
        else:
            c = draw(temperature_scale(dist, request.temperature), state.rng)
        nll -= float(np.log(max(dist[c], 1e-300)))
        out[n] = c
        if n + 1 < request.num_samples:
            step(model, state, c)
    wave = QuantizedWaveform(out, request.sample_rate_hz, model.config.num_classes)
    return wave, nll / request.num_samples


def generate(model: WaveNetModel, request: GenerationRequest) -> QuantizedWaveform:
    return generate_with_nll(model, request)[0]
