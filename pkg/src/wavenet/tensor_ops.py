"""Numerical kernels with hand-written backward passes.

Activations are time-major arrays of shape ``(..., T, C)``; any leading axes
are treated as a batch. A convolution kernel stores its weights as
``(filter_width, C_in, C_out)``; tap ``filter_width - 1`` reads the current
timestep and tap ``i`` reads ``dilation * (filter_width - 1 - i)`` steps back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError, StateError


@dataclass
class ConvKernel:
    weight: np.ndarray
    bias: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        if self.weight.ndim != 3:
            raise ShapeError(f"kernel weight must be (width, C_in, C_out), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[2],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match C_out {self.weight.shape[2]}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def filter_width(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[2]

    @classmethod
    def zeros(cls, filter_width, c_in, c_out, dilation=1, dtype=np.float64):
        return cls(np.zeros((filter_width, c_in, c_out), dtype), np.zeros(c_out, dtype), dilation)


class GradientTape:
    """Gradient accumulators keyed like a parameter dict, plus saved forward values."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.grads = {name: np.zeros_like(p) for name, p in params.items()}
        self.saved: dict = {}

    def zero(self):
        for g in self.grads.values():
            g.fill(0.0)
        self.saved.clear()

    def save(self, key, value):
        self.saved[key] = value

    def load(self, key):
        try:
            return self.saved[key]
        except KeyError:
            raise StateError(f"no saved forward value for {key!r}; run forward with this tape first") from None

    def kernel(self, prefix: str, dilation: int = 1) -> ConvKernel:
        """Gradient accumulator view shaped like the parameter kernel ``prefix``."""
        return ConvKernel(self.grads[prefix + ".w"], self.grads[prefix + ".b"], dilation)


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def _check_input(x, kernel):
    if x.shape[-1] != kernel.c_in:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[-1]} channels, "
            f"kernel shape {kernel.weight.shape} expects {kernel.c_in}"
        )


def causal_conv(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    _check_input(x, kernel)
    T = x.shape[-2]
    F, d = kernel.filter_width, kernel.dilation
    y = x @ kernel.weight[F - 1] + kernel.bias
    for i in range(F - 1):
        s = d * (F - 1 - i)
        if s < T:
            y[..., s:, :] += x[..., : T - s, :] @ kernel.weight[i]
    return y


def causal_conv_backward(grad_out, x, kernel: ConvKernel, grad_kernel: ConvKernel | None = None):
    """Return the input gradient; kernel gradients are added into ``grad_kernel``."""
    if x is None:
        raise StateError("causal_conv_backward needs the saved forward input")
    _check_input(x, kernel)
    if grad_out.shape[:-1] != x.shape[:-1] or grad_out.shape[-1] != kernel.c_out:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output for input {x.shape}")
    T = x.shape[-2]
    F, d = kernel.filter_width, kernel.dilation
    grad_x = grad_out @ kernel.weight[F - 1].T
    if grad_kernel is not None:
        grad_kernel.weight[F - 1] += _flat(x).T @ _flat(grad_out)
        grad_kernel.bias += _flat(grad_out).sum(axis=0)
    for i in range(F - 1):
        s = d * (F - 1 - i)
        if s >= T:
            continue
        g = grad_out[..., s:, :]
        grad_x[..., : T - s, :] += g @ kernel.weight[i].T
        if grad_kernel is not None:
            grad_kernel.weight[i] += _flat(x[..., : T - s, :]).T @ _flat(g)
    return grad_x


def centered_conv(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Non-causal 'same' convolution; tap i reads offset ``i - (F - 1) // 2``."""
    _check_input(x, kernel)
    T = x.shape[-2]
    F = kernel.filter_width
    y = np.zeros(x.shape[:-1] + (kernel.c_out,), dtype=np.result_type(x, kernel.weight))
    y += kernel.bias
    for i in range(F):
        o = (i - (F - 1) // 2) * kernel.dilation
        if abs(o) >= T:
            continue
        if o >= 0:
            y[..., : T - o, :] += x[..., o:, :] @ kernel.weight[i]
        else:
            y[..., -o:, :] += x[..., : T + o, :] @ kernel.weight[i]
    return y


def centered_conv_backward(grad_out, x, kernel: ConvKernel, grad_kernel: ConvKernel | None = None):
    if x is None:
        raise StateError("centered_conv_backward needs the saved forward input")
    T = x.shape[-2]
    F = kernel.filter_width
    grad_x = np.zeros_like(x)
    if grad_kernel is not None:
        grad_kernel.bias += _flat(grad_out).sum(axis=0)
    for i in range(F):
        o = (i - (F - 1) // 2) * kernel.dilation
        if abs(o) >= T:
            continue
        if o >= 0:
            xs, gs = (slice(o, None), slice(0, T - o))
        else:
            xs, gs = (slice(0, T + o), slice(-o, None))
        g = grad_out[..., gs, :]
        grad_x[..., xs, :] += g @ kernel.weight[i].T
        if grad_kernel is not None:
            grad_kernel.weight[i] += _flat(x[..., xs, :]).T @ _flat(g)
    return grad_x


def _check_1x1(kernel):
    if kernel.filter_width != 1:
        raise ConfigError(f"conv1x1 needs filter_width 1, got {kernel.filter_width}")


def conv1x1(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    _check_1x1(kernel)
    _check_input(x, kernel)
    return x @ kernel.weight[0] + kernel.bias


def conv1x1_backward(grad_out, x, kernel: ConvKernel, grad_kernel: ConvKernel | None = None):
    if x is None:
        raise StateError("conv1x1_backward needs the saved forward input")
    _check_1x1(kernel)
    if grad_kernel is not None:
        grad_kernel.weight[0] += _flat(x).T @ _flat(grad_out)
        grad_kernel.bias += _flat(grad_out).sum(axis=0)
    return grad_out @ kernel.weight[0].T


def sigmoid(x):
    # tanh form is overflow-free for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def gated_activation(filter_pre: np.ndarray, gate_pre: np.ndarray) -> np.ndarray:
    if filter_pre.shape != gate_pre.shape:
        raise ShapeError(f"filter shape {filter_pre.shape} != gate shape {gate_pre.shape}")
    return np.tanh(filter_pre) * sigmoid(gate_pre)


def gated_activation_backward(grad_out, filter_pre, gate_pre):
    if filter_pre is None or gate_pre is None:
        raise StateError("gated_activation_backward needs the saved pre-activations")
    if not (grad_out.shape == filter_pre.shape == gate_pre.shape):
        raise ShapeError(
            f"shapes differ: grad {grad_out.shape}, filter {filter_pre.shape}, gate {gate_pre.shape}"
        )
    th = np.tanh(filter_pre)
    sg = sigmoid(gate_pre)
    return grad_out * sg * (1.0 - th * th), grad_out * th * sg * (1.0 - sg)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def replication_kernel(channels: int, factor: int, dtype=np.float64) -> ConvKernel:
    """Transposed-conv kernel that reproduces :func:`repeat_upsample`."""
    w = np.broadcast_to(np.eye(channels, dtype=dtype), (factor, channels, channels)).copy()
    return ConvKernel(w, np.zeros(channels, dtype))


def _check_upsample(kernel, factor):
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    if kernel.filter_width != factor:
        raise ConfigError(
            f"transposed kernel width {kernel.filter_width} must equal the upsample factor {factor}"
        )


def upsample_transposed(cond: np.ndarray, kernel: ConvKernel, factor: int) -> np.ndarray:
    """Stride-``factor`` transposed convolution with kernel width ``factor``.

    Output step ``t * factor + j`` equals ``cond[t] @ W[j] + b``, so output
    length is exactly ``T * factor``.
    """
    _check_upsample(kernel, factor)
    _check_input(cond, kernel)
    T, cin, cout = cond.shape[-2], kernel.c_in, kernel.c_out
    w = kernel.weight.transpose(1, 0, 2).reshape(cin, factor * cout)
    y = (cond @ w).reshape(cond.shape[:-2] + (T * factor, cout))
    return y + kernel.bias


def upsample_transposed_backward(grad_out, cond, kernel: ConvKernel, factor: int,
                                 grad_kernel: ConvKernel | None = None):
    if cond is None:
        raise StateError("upsample_transposed_backward needs the saved conditioning input")
    _check_upsample(kernel, factor)
    T, cin, cout = cond.shape[-2], kernel.c_in, kernel.c_out
    g = grad_out.reshape(grad_out.shape[:-2] + (T, factor * cout))
    w = kernel.weight.transpose(1, 0, 2).reshape(cin, factor * cout)
    if grad_kernel is not None:
        gw = (_flat(cond).T @ _flat(g)).reshape(cin, factor, cout)
        grad_kernel.weight += gw.transpose(1, 0, 2)
        grad_kernel.bias += _flat(grad_out).sum(axis=0)
    return g @ w.T


def repeat_upsample(cond: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    return np.repeat(cond, factor, axis=-2)


def repeat_upsample_backward(grad_out, factor: int):
    T = grad_out.shape[-2] // factor
    return grad_out.reshape(grad_out.shape[:-2] + (T, factor, grad_out.shape[-1])).sum(axis=-2)


def mean_pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping mean over windows of ``factor`` steps; a partial tail window is dropped."""
    if factor < 1:
        raise ConfigError(f"pool factor must be >= 1, got {factor}")
    frames = x.shape[-2] // factor
    x = x[..., : frames * factor, :]
    return x.reshape(x.shape[:-2] + (frames, factor, x.shape[-1])).mean(axis=-2)


def mean_pool_backward(grad_out, factor: int, length: int):
    frames = grad_out.shape[-2]
    g = np.repeat(grad_out / factor, factor, axis=-2)
    if length > frames * factor:
        pad = [(0, 0)] * g.ndim
        pad[-2] = (0, length - frames * factor)
        g = np.pad(g, pad)
    return g


def shift_right(x: np.ndarray, steps: int) -> np.ndarray:
    """Delay along time by ``steps`` with zero fill."""
    if steps == 0:
        return x
    y = np.zeros_like(x)
    if steps < x.shape[-2]:
        y[..., steps:, :] = x[..., : x.shape[-2] - steps, :]
    return y


def shift_left(x: np.ndarray, steps: int) -> np.ndarray:
    """Adjoint of :func:`shift_right`."""
    if steps == 0:
        return x
    y = np.zeros_like(x)
    if steps < x.shape[-2]:
        y[..., : x.shape[-2] - steps, :] = x[..., steps:, :]
    return y


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, targets, mask=None):
    """Mean cross-entropy over unmasked steps and its gradient w.r.t. ``logits``.

    Returns ``(loss, grad_logits)``; the gradient is ``(softmax - onehot) / count``.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    C = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= C):
        raise DataError(f"target class outside [0, {C - 1}]")
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != targets.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match targets {targets.shape}")
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -float(np.sum(picked, where=mask, dtype=np.float64)) / count
    grad = np.exp(logp)
    # flush near-denormal probabilities; denormal float32 arithmetic is very slow
    grad[grad < np.finfo(grad.dtype).tiny * 1e8] = 0.0
    np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
    grad *= (mask[..., None] / count).astype(grad.dtype)
    return loss, grad
