"""WaveNet graph: gated residual stack, conditioning, context stacks, heads.

Layout of one forward pass over input classes ``x`` (batch ``B``, length ``N``):

* every context stack embeds ``x``, mean-pools it by its ``pool_factor``, runs
  its own gated residual layers at the pooled rate, and the result is
  repeat-upsampled and delayed by ``pool_factor - 1`` steps so step ``t`` only
  sees frames that end at or before ``t``;
* the main stack embeds the last ``window`` classes (all of them by default)
  through a one-hot lookup, then each layer computes
  ``z = tanh(Wf*h + cond_f) * sigmoid(Wg*h + cond_g)``, adds a 1x1 skip
  projection of ``z`` to the skip sum and a 1x1 residual projection to ``h``;
* the output head is ReLU, 1x1, ReLU, 1x1 over the skip sum;
* the optional classifier mean-pools the rectified skip sum and applies two
  width-3 non-causal convolutions.

``logits[t]`` is the predictive distribution for the class that follows
``x[t]``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_ops as ops
from .errors import ConfigError, DataError, FormatError, IntegrityError, ShapeError
from .tensor_ops import ConvKernel, GradientTape


@dataclass(frozen=True)
class LocalCondConfig:
    dim: int
    upsample_factor: int
    mode: str = "transposed"  # or "repeat"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"local conditioning dim must be >= 1, got {self.dim}")
        if self.upsample_factor < 1:
            raise ConfigError(f"upsample_factor must be >= 1, got {self.upsample_factor}")
        if self.mode not in ("transposed", "repeat"):
            raise ConfigError(f"local conditioning mode must be 'transposed' or 'repeat', got {self.mode!r}")


@dataclass(frozen=True)
class ContextStackConfig:
    dilation_schedule: tuple[int, ...]
    channels: int
    pool_factor: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dilation_schedule", tuple(int(d) for d in self.dilation_schedule))
        if not self.dilation_schedule or min(self.dilation_schedule) < 1:
            raise ConfigError(f"context dilation schedule must be non-empty and >= 1: {self.dilation_schedule}")
        if self.channels < 1:
            raise ConfigError(f"context channels must be >= 1, got {self.channels}")
        if self.pool_factor < 1:
            raise ConfigError(f"context pool_factor must be >= 1, got {self.pool_factor}")


@dataclass(frozen=True)
class ClassifierConfig:
    num_labels: int
    pool_factor: int = 160

    def __post_init__(self):
        if self.num_labels < 2:
            raise ConfigError(f"classifier needs >= 2 labels, got {self.num_labels}")
        if self.pool_factor < 1:
            raise ConfigError(f"classifier pool_factor must be >= 1, got {self.pool_factor}")


def doubling_schedule(max_dilation: int = 512, repeats: int = 1) -> tuple[int, ...]:
    """``1, 2, 4, ..., max_dilation`` repeated ``repeats`` times."""
    block = []
    d = 1
    while d <= max_dilation:
        block.append(d)
        d *= 2
    return tuple(block) * repeats


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 256
    residual_channels: int = 32
    skip_channels: int = 64
    filter_width: int = 2
    dilation_schedule: tuple[int, ...] = field(default_factory=lambda: doubling_schedule(512))
    global_cond_dim: int | None = None
    local_cond: LocalCondConfig | None = None
    context_stacks: tuple[ContextStackConfig, ...] = ()
    classifier: ClassifierConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "dilation_schedule", tuple(int(d) for d in self.dilation_schedule))
        object.__setattr__(self, "context_stacks", tuple(self.context_stacks))
        if not self.dilation_schedule:
            raise ConfigError("dilation_schedule must be non-empty")
        if min(self.dilation_schedule) < 1:
            raise ConfigError(f"all dilations must be >= 1: {self.dilation_schedule}")
        for name in ("num_classes", "residual_channels", "skip_channels", "filter_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.global_cond_dim is not None and self.global_cond_dim < 1:
            raise ConfigError(f"global_cond_dim must be >= 1, got {self.global_cond_dim}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        if d.get("local_cond") is not None:
            d["local_cond"] = LocalCondConfig(**d["local_cond"])
        if d.get("classifier") is not None:
            d["classifier"] = ClassifierConfig(**d["classifier"])
        d["context_stacks"] = tuple(ContextStackConfig(**c) for c in d.get("context_stacks", ()))
        if "dilation_schedule" in d:
            d["dilation_schedule"] = tuple(d["dilation_schedule"])
        return cls(**d)


def receptive_field(config: ModelConfig) -> int:
    """Number of input steps that can influence one main-stack output step."""
    return 1 + sum((config.filter_width - 1) * d for d in config.dilation_schedule)


@dataclass
class ConditioningInput:
    global_vec: np.ndarray | None = None
    local_series: np.ndarray | None = None


def one_hot(index: int, dim: int, dtype=np.float32) -> np.ndarray:
    v = np.zeros(dim, dtype)
    v[index] = 1.0
    return v


# parameter groups whose weights start at zero so conditioning and residual paths start neutral
_ZERO_INIT = ("global_filter", "global_gate", "local_filter", "local_gate", "res")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; the declaration order used by checkpoints."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, width, cin, cout):
        shapes[name + ".w"] = (width, cin, cout)
        shapes[name + ".b"] = (cout,)

    C, R, S, F = config.num_classes, config.residual_channels, config.skip_channels, config.filter_width
    conv("embed", 1, C, R)
    lc = config.local_cond
    if lc is not None and lc.mode == "transposed":
        conv("upsample", lc.upsample_factor, lc.dim, lc.dim)
    for i, cs in enumerate(config.context_stacks):
        conv(f"ctx{i}.embed", 1, C, cs.channels)
        for j, _ in enumerate(cs.dilation_schedule):
            conv(f"ctx{i}.layer{j}.filter", F, cs.channels, cs.channels)
            conv(f"ctx{i}.layer{j}.gate", F, cs.channels, cs.channels)
            conv(f"ctx{i}.layer{j}.res", 1, cs.channels, cs.channels)
    for k, _ in enumerate(config.dilation_schedule):
        conv(f"layer{k}.filter", F, R, R)
        conv(f"layer{k}.gate", F, R, R)
        if config.global_cond_dim is not None:
            conv(f"layer{k}.global_filter", 1, config.global_cond_dim, R)
            conv(f"layer{k}.global_gate", 1, config.global_cond_dim, R)
        if lc is not None:
            conv(f"layer{k}.local_filter", 1, lc.dim, R)
            conv(f"layer{k}.local_gate", 1, lc.dim, R)
        for i, cs in enumerate(config.context_stacks):
            conv(f"layer{k}.ctx{i}_filter", 1, cs.channels, R)
            conv(f"layer{k}.ctx{i}_gate", 1, cs.channels, R)
        conv(f"layer{k}.res", 1, R, R)
        conv(f"layer{k}.skip", 1, R, S)
    conv("head1", 1, S, S)
    conv("head2", 1, S, C)
    if config.classifier is not None:
        conv("cls1", 3, S, S)
        conv("cls2", 3, S, config.classifier.num_labels)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32, neutral: bool = True):
    """Uniform +-sqrt(1/(width*C_in)) weights, zero biases.

    With ``neutral`` the conditioning projections, context projections, and
    residual 1x1 weights start at zero. Without it every weight and bias is
    random, which is what perturbation probes and gradient checks want.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        base, kind = name.rsplit(".", 1)
        if kind == "b":
            if neutral:
                params[name] = np.zeros(shape, dtype)
            else:
                params[name] = rng.uniform(-0.5, 0.5, size=shape).astype(dtype)
            continue
        leaf = base.rsplit(".", 1)[-1]
        if neutral and (leaf in _ZERO_INIT or leaf.startswith("ctx")):
            params[name] = np.zeros(shape, dtype)
        elif base == "upsample":
            params[name] = ops.replication_kernel(shape[1], shape[0], dtype).weight
        else:
            bound = np.sqrt(1.0 / (shape[0] * shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def _embed(classes, kernel: ConvKernel):
    return kernel.weight[0][classes] + kernel.bias


def _embed_backward(grad_out, classes, grad_kernel: ConvKernel):
    gw = grad_kernel.weight[0]
    flat_c = classes.reshape(-1)
    flat_g = grad_out.reshape(-1, grad_out.shape[-1])
    # sort-free scatter-add: bincount per channel
    n = gw.shape[0]
    for ch in range(gw.shape[1]):
        gw[:, ch] += np.bincount(flat_c, weights=flat_g[:, ch], minlength=n).astype(gw.dtype)
    grad_kernel.bias += flat_g.sum(axis=0)


class WaveNetModel:
    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0, dtype=np.float32):
        self.config = config
        if params is None:
            params = init_params(config, seed, dtype)
        shapes = param_shapes(config)
        if list(params) != list(shapes):
            raise ConfigError("parameter names do not match the model config")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ConfigError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.params = params

    # --- bookkeeping -------------------------------------------------------

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.config)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def kernel(self, prefix: str, dilation: int = 1) -> ConvKernel:
        return ConvKernel(self.params[prefix + ".w"], self.params[prefix + ".b"], dilation)

    def astype(self, dtype) -> WaveNetModel:
        return WaveNetModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> WaveNetModel:
        return self.astype(self.dtype)

    def new_tape(self) -> GradientTape:
        return GradientTape(self.params)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params.values())

    # --- input checking ----------------------------------------------------

    def _prepare(self, classes, cond: ConditioningInput | None):
        cfg = self.config
        x = np.asarray(classes)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2:
            raise ShapeError(f"input classes must be (T,) or (B, T), got {x.shape}")
        if x.shape[1] < 1:
            raise DataError("input length must be >= 1")
        if not np.issubdtype(x.dtype, np.integer):
            raise DataError(f"input classes must be integers, got {x.dtype}")
        if x.min() < 0 or x.max() >= cfg.num_classes:
            raise DataError(f"input class outside [0, {cfg.num_classes - 1}]")
        B, N = x.shape
        cond = cond or ConditioningInput()
        gv = ls = None
        if cfg.global_cond_dim is None:
            if cond.global_vec is not None:
                raise ConfigError("model has no global conditioning but a global vector was given")
        else:
            if cond.global_vec is None:
                raise ConfigError(f"model expects a global conditioning vector of dim {cfg.global_cond_dim}")
            gv = np.asarray(cond.global_vec, dtype=self.dtype)
            if gv.shape[-1] != cfg.global_cond_dim or gv.ndim not in (1, 2):
                raise ConfigError(f"global vector shape {gv.shape} does not match dim {cfg.global_cond_dim}")
            gv = np.broadcast_to(gv.reshape(-1, cfg.global_cond_dim), (B, cfg.global_cond_dim))
        lc = cfg.local_cond
        if lc is None:
            if cond.local_series is not None:
                raise ConfigError("model has no local conditioning but a local series was given")
        else:
            if cond.local_series is None:
                raise ConfigError(f"model expects a local conditioning series of dim {lc.dim}")
            ls = np.asarray(cond.local_series, dtype=self.dtype)
            if ls.ndim == 2:
                ls = ls[None]
            if ls.ndim != 3 or ls.shape[-1] != lc.dim:
                raise ConfigError(f"local series shape {ls.shape} does not match dim {lc.dim}")
            if ls.shape[1] * lc.upsample_factor != N:
                raise ShapeError(
                    f"local series of {ls.shape[1]} steps x factor {lc.upsample_factor} "
                    f"!= audio length {N}"
                )
            ls = np.broadcast_to(ls, (B,) + ls.shape[1:])
        return x, gv, ls, squeeze

    # --- forward -----------------------------------------------------------

    def forward(self, classes, cond: ConditioningInput | None = None,
                tape: GradientTape | None = None, window: int | None = None) -> np.ndarray:
        """Next-sample logits, ``(T, num_classes)`` or ``(B, T, num_classes)``."""
        return self._run(classes, cond, tape, window, frames=False)[0]

    def forward_with_context(self, classes, cond: ConditioningInput | None = None,
                             window: int | None = None, tape: GradientTape | None = None):
        """Run context stacks over the whole input and the main stack over the last ``window`` steps."""
        if not self.config.context_stacks:
            raise ConfigError("model has no context stacks")
        n = np.asarray(classes).shape[-1]
        need = max(cs.pool_factor for cs in self.config.context_stacks)
        if n < need or (window is not None and window > n):
            raise DataError(
                f"input of {n} steps is shorter than the context requirement "
                f"(pool factor {need}, window {window})"
            )
        return self._run(classes, cond, tape, window, frames=False)[0]

    def classify_frames(self, classes, cond: ConditioningInput | None = None,
                        tape: GradientTape | None = None):
        """Return ``(frame_logits, next_sample_logits)``; a partial tail frame is dropped."""
        if self.config.classifier is None:
            raise ConfigError("model has no classifier head")
        logits, frame_logits = self._run(classes, cond, tape, None, frames=True)
        return frame_logits, logits

    def _context_series(self, x, tape):
        """Audio-rate, causally delayed outputs of each context stack, full length."""
        cfg = self.config
        N = x.shape[1]
        outs = []
        for i, cs in enumerate(cfg.context_stacks):
            p = cs.pool_factor
            e = _embed(x, self.kernel(f"ctx{i}.embed"))
            h = ops.mean_pool(e, p)
            for j, d in enumerate(cs.dilation_schedule):
                pre = f"ctx{i}.layer{j}"
                f = ops.causal_conv(h, self.kernel(pre + ".filter", d))
                g = ops.causal_conv(h, self.kernel(pre + ".gate", d))
                z = ops.gated_activation(f, g)
                if tape is not None:
                    tape.save((pre, "h"), h)
                    tape.save((pre, "f"), f)
                    tape.save((pre, "g"), g)
                    tape.save((pre, "z"), z)
                h = h + ops.conv1x1(z, self.kernel(pre + ".res"))
            r = ops.repeat_upsample(h, p)
            r = np.concatenate([r, np.zeros((r.shape[0], N - r.shape[1], r.shape[2]), r.dtype)], axis=1)
            outs.append(ops.shift_right(r, p - 1))
        return outs

    def _run(self, classes, cond, tape, window, frames):
        cfg = self.config
        x, gv, ls, squeeze = self._prepare(classes, cond)
        B, N = x.shape
        W = N if window is None else int(window)
        if not 1 <= W <= N:
            raise DataError(f"window {window} must lie in [1, {N}]")
        start = N - W
        xm = x[:, start:]
        if tape is not None:
            tape.zero()
            tape.save("x", x)
            tape.save("window", W)
            tape.save("gv", gv)

        ctx = [c[:, start:] for c in self._context_series(x, tape)]
        if tape is not None:
            tape.save("ctx", ctx)

        y = None
        lc = cfg.local_cond
        if lc is not None:
            if lc.mode == "transposed":
                y = ops.upsample_transposed(ls, self.kernel("upsample"), lc.upsample_factor)
            else:
                y = ops.repeat_upsample(ls, lc.upsample_factor)
            if tape is not None:
                tape.save("ls", ls)
                tape.save("y_full_len", y.shape[1])
            y = y[:, start:]
            if tape is not None:
                tape.save("y", y)

        h = _embed(xm, self.kernel("embed"))
        skip = None
        for k, d in enumerate(cfg.dilation_schedule):
            pre = f"layer{k}"
            f = ops.causal_conv(h, self.kernel(pre + ".filter", d))
            g = ops.causal_conv(h, self.kernel(pre + ".gate", d))
            if gv is not None:
                f = f + ops.conv1x1(gv, self.kernel(pre + ".global_filter"))[:, None, :]
                g = g + ops.conv1x1(gv, self.kernel(pre + ".global_gate"))[:, None, :]
            if y is not None:
                f = f + ops.conv1x1(y, self.kernel(pre + ".local_filter"))
                g = g + ops.conv1x1(y, self.kernel(pre + ".local_gate"))
            for i, c in enumerate(ctx):
                f = f + ops.conv1x1(c, self.kernel(f"{pre}.ctx{i}_filter"))
                g = g + ops.conv1x1(c, self.kernel(f"{pre}.ctx{i}_gate"))
            z = ops.gated_activation(f, g)
            if tape is not None:
                tape.save((pre, "h"), h)
                tape.save((pre, "f"), f)
                tape.save((pre, "g"), g)
                tape.save((pre, "z"), z)
            s = ops.conv1x1(z, self.kernel(pre + ".skip"))
            skip = s if skip is None else skip + s
            h = h + ops.conv1x1(z, self.kernel(pre + ".res"))

        a1 = ops.relu(skip)
        o1 = ops.conv1x1(a1, self.kernel("head1"))
        a2 = ops.relu(o1)
        logits = ops.conv1x1(a2, self.kernel("head2"))
        if tape is not None:
            tape.save("skip", skip)
            tape.save("o1", o1)
            tape.save("a2", a2)

        frame_logits = None
        if frames:
            P = cfg.classifier.pool_factor
            pooled = ops.mean_pool(a1, P)
            c1 = ops.centered_conv(pooled, self.kernel("cls1"))
            r1 = ops.relu(c1)
            frame_logits = ops.centered_conv(r1, self.kernel("cls2"))
            if tape is not None:
                tape.save("pooled", pooled)
                tape.save("c1", c1)
                tape.save("r1", r1)
            if squeeze:
                frame_logits = frame_logits[0]
        if tape is not None:
            tape.save("frames", frames)
        if squeeze:
            logits = logits[0]
        return logits, frame_logits

    # --- backward ----------------------------------------------------------

    def backward(self, tape: GradientTape, grad_logits, grad_frame_logits=None) -> GradientTape:
        """Accumulate parameter gradients for the forward pass recorded on ``tape``."""
        cfg = self.config
        x = tape.load("x")
        W = tape.load("window")
        B, N = x.shape
        start = N - W
        skip = tape.load("skip")
        grad_logits = np.asarray(grad_logits, dtype=skip.dtype).reshape(skip.shape[:-1] + (cfg.num_classes,))
        G = tape.kernel

        a1 = ops.relu(skip)
        a2 = tape.load("a2")
        ga2 = ops.conv1x1_backward(grad_logits, a2, self.kernel("head2"), G("head2"))
        go1 = ops.relu_backward(ga2, tape.load("o1"))
        ga1 = ops.conv1x1_backward(go1, a1, self.kernel("head1"), G("head1"))

        if grad_frame_logits is not None:
            if not tape.load("frames"):
                raise ConfigError("frame gradient given but forward ran without the classifier")
            P = cfg.classifier.pool_factor
            pooled, c1, r1 = tape.load("pooled"), tape.load("c1"), tape.load("r1")
            gfl = np.asarray(grad_frame_logits, dtype=skip.dtype).reshape(pooled.shape[:-1] + (-1,))
            gr1 = ops.centered_conv_backward(gfl, r1, self.kernel("cls2"), G("cls2"))
            gc1 = ops.relu_backward(gr1, c1)
            gpooled = ops.centered_conv_backward(gc1, pooled, self.kernel("cls1"), G("cls1"))
            ga1 = ga1 + ops.mean_pool_backward(gpooled, P, W)
        gskip = ops.relu_backward(ga1, skip)

        gv = tape.load("gv")
        y = tape.load("y") if cfg.local_cond is not None else None
        ctx = tape.load("ctx")
        gy = np.zeros_like(y) if y is not None else None
        gctx = [np.zeros_like(c) for c in ctx]

        gh = np.zeros(skip.shape[:-1] + (cfg.residual_channels,), skip.dtype)
        for k in reversed(range(len(cfg.dilation_schedule))):
            d = cfg.dilation_schedule[k]
            pre = f"layer{k}"
            h, f, g, z = (tape.load((pre, n)) for n in ("h", "f", "g", "z"))
            gz = ops.conv1x1_backward(gskip, z, self.kernel(pre + ".skip"), G(pre + ".skip"))
            gz = gz + ops.conv1x1_backward(gh, z, self.kernel(pre + ".res"), G(pre + ".res"))
            gf, gg = ops.gated_activation_backward(gz, f, g)
            if gv is not None:
                ops.conv1x1_backward(gf.sum(axis=1), gv, self.kernel(pre + ".global_filter"), G(pre + ".global_filter"))
                ops.conv1x1_backward(gg.sum(axis=1), gv, self.kernel(pre + ".global_gate"), G(pre + ".global_gate"))
            if y is not None:
                gy += ops.conv1x1_backward(gf, y, self.kernel(pre + ".local_filter"), G(pre + ".local_filter"))
                gy += ops.conv1x1_backward(gg, y, self.kernel(pre + ".local_gate"), G(pre + ".local_gate"))
            for i, c in enumerate(ctx):
                gctx[i] += ops.conv1x1_backward(gf, c, self.kernel(f"{pre}.ctx{i}_filter"), G(f"{pre}.ctx{i}_filter"))
                gctx[i] += ops.conv1x1_backward(gg, c, self.kernel(f"{pre}.ctx{i}_gate"), G(f"{pre}.ctx{i}_gate"))
            # residual identity path carries gh through unchanged
            gh = gh + ops.causal_conv_backward(gf, h, self.kernel(pre + ".filter", d), G(pre + ".filter", d))
            gh = gh + ops.causal_conv_backward(gg, h, self.kernel(pre + ".gate", d), G(pre + ".gate", d))
        _embed_backward(gh, x[:, start:], G("embed"))

        lc = cfg.local_cond
        if lc is not None and lc.mode == "transposed":
            gy_full = np.zeros((B, tape.load("y_full_len"), lc.dim), gy.dtype)
            gy_full[:, start:] = gy
            ops.upsample_transposed_backward(gy_full, tape.load("ls"), self.kernel("upsample"),
                                             lc.upsample_factor, G("upsample"))

        for i, cs in enumerate(cfg.context_stacks):
            p = cs.pool_factor
            gfull = np.zeros((B, N, cs.channels), skip.dtype)
            gfull[:, start:] = gctx[i]
            gr = ops.shift_left(gfull, p - 1)[:, : (N // p) * p]
            gh_c = ops.repeat_upsample_backward(gr, p)
            for j in reversed(range(len(cs.dilation_schedule))):
                d = cs.dilation_schedule[j]
                pre = f"ctx{i}.layer{j}"
                h, f, g, z = (tape.load((pre, n)) for n in ("h", "f", "g", "z"))
                gz = ops.conv1x1_backward(gh_c, z, self.kernel(pre + ".res"), G(pre + ".res"))
                gf, gg = ops.gated_activation_backward(gz, f, g)
                gh_c = gh_c + ops.causal_conv_backward(gf, h, self.kernel(pre + ".filter", d), G(pre + ".filter", d))
                gh_c = gh_c + ops.causal_conv_backward(gg, h, self.kernel(pre + ".gate", d), G(pre + ".gate", d))
            ge = ops.mean_pool_backward(gh_c, p, N)
            _embed_backward(ge, x, G(f"ctx{i}.embed"))
        return tape


# --- checkpoints -------------------------------------------------------------

MAGIC = b"WAVENET\x00"
FORMAT_VERSION = 1


def save_checkpoint(model: WaveNetModel, path) -> None:
    """Little-endian: magic, u32 version, u32-length JSON header, raw params, u64 checksum."""
    header = {
        "config": model.config.to_dict(),
        "dtype": np.dtype(model.dtype).str.replace(">", "<").replace("=", "<"),
        "params": [[name, list(p.shape)] for name, p in model.params.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    dt = np.dtype(header["dtype"])
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<I", len(hbytes))
    body += hbytes
    for p in model.params.values():
        body += np.ascontiguousarray(p, dtype=dt).tobytes()
    body += struct.pack("<Q", _checksum(bytes(body)))
    Path(path).write_bytes(bytes(body))


def _checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def load_checkpoint(path) -> WaveNetModel:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 16:
        raise IntegrityError(f"{path}: file too short to be a checkpoint ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    if _checksum(data[:-8]) != stored:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC) + 4)
    off = len(MAGIC) + 8
    try:
        header = json.loads(data[off: off + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        dt = np.dtype(header["dtype"])
        listed = [(n, tuple(s)) for n, s in header["params"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    expected = list(param_shapes(config).items())
    if listed != expected:
        raise FormatError(f"{path}: parameter listing does not match the stored model config")
    off += hlen
    payload = data[off:-8]
    need = sum(int(np.prod(s)) for _, s in expected) * dt.itemsize
    if len(payload) != need:
        raise IntegrityError(f"{path}: parameter payload is {len(payload)} bytes, expected {need}")
    params = {}
    pos = 0
    for name, shape in expected:
        n = int(np.prod(shape)) * dt.itemsize
        params[name] = np.frombuffer(payload[pos: pos + n], dtype=dt).reshape(shape).copy()
        pos += n
    return WaveNetModel(config, params)


def probe_receptive_field(model: WaveNetModel, length: int | None = None, seed: int = 0,
                          cond: ConditioningInput | None = None, batch: int = 64) -> int:
    """Measure the receptive field of the last output step by single-position perturbation.

    Returns ``1 + max lag`` whose perturbation changes ``logits[-1]``.
    Needs generic (non-zero) weights to be tight.
    """
    cfg = model.config
    rf = receptive_field(cfg)
    T = length or rf + 8
    rng = np.random.default_rng(seed)
    base = rng.integers(cfg.num_classes, size=T)
    ref = model.forward(base, cond)[-1]
    max_lag = -1
    for lo in range(0, T, batch):
        lags = np.arange(lo, min(lo + batch, T))
        xs = np.repeat(base[None], len(lags), axis=0)
        pos = T - 1 - lags
        xs[np.arange(len(lags)), pos] = (base[pos] + 1 + rng.integers(cfg.num_classes - 1, size=len(lags))) % cfg.num_classes
        c = None
        if cond is not None:
            c = ConditioningInput(
                None if cond.global_vec is None else np.broadcast_to(cond.global_vec, (len(lags),) + np.shape(cond.global_vec)),
                None if cond.local_series is None else np.broadcast_to(cond.local_series, (len(lags),) + np.shape(cond.local_series)),
            )
        out = model.forward(xs, c)[:, -1]
        changed = np.any(out != ref, axis=-1)
        if np.any(changed):
            max_lag = max(max_lag, int(lags[changed].max()))
    return max_lag + 1
