"""mu-law companding and 256-level quantization.

Continuous amplitudes live in [-1, 1]. Quantization compands, then assigns
half-open bins ``floor((y + 1) / 2 * num_classes)`` with a final clamp so that
exactly +1.0 lands in the top class. Reconstruction uses bin centres in the
companded domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DomainError


@dataclass(frozen=True)
class CompandingParams:
    mu: int = 255
    num_classes: int = 256

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")


DEFAULT_PARAMS = CompandingParams()


@dataclass(frozen=True)
class ContinuousWaveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        _check_unit_range(samples)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class QuantizedWaveform:
    classes: np.ndarray
    sample_rate_hz: int
    num_classes: int = 256

    def __post_init__(self):
        classes = np.asarray(self.classes)
        if classes.ndim != 1:
            raise DataError(f"class sequence must be 1-D, got shape {classes.shape}")
        if classes.size and not np.issubdtype(classes.dtype, np.integer):
            raise DataError(f"class sequence must be integer, got {classes.dtype}")
        classes = classes.astype(np.int64)
        _check_classes(classes, self.num_classes)
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "classes", classes)

    def __len__(self):
        return len(self.classes)


def _check_unit_range(x):
    x = np.asarray(x)
    bad = ~(np.abs(x) <= 1.0)  # also catches NaN
    if np.any(bad):
        value = x.flat[int(np.flatnonzero(bad.ravel())[0])]
        raise DomainError(f"amplitude {value!r} outside [-1, 1]")


def _check_classes(c, num_classes):
    bad = (c < 0) | (c >= num_classes)
    if np.any(bad):
        value = c.flat[int(np.flatnonzero(bad.ravel())[0])]
        raise DataError(f"class {int(value)} outside [0, {num_classes - 1}]")


def mulaw_compand(x, params: CompandingParams = DEFAULT_PARAMS):
    """Return ``sign(x) * ln(1 + mu|x|) / ln(1 + mu)``; scalar in, scalar out."""
    arr = np.asarray(x, dtype=np.float64)
    _check_unit_range(arr)
    mu = float(params.mu)
    out = np.sign(arr) * np.log1p(mu * np.abs(arr)) / np.log1p(mu)
    return float(out) if out.ndim == 0 else out


def mulaw_expand(y, params: CompandingParams = DEFAULT_PARAMS):
    """Inverse of :func:`mulaw_compand`: ``sign(y) * ((1 + mu)^|y| - 1) / mu``."""
    arr = np.asarray(y, dtype=np.float64)
    _check_unit_range(arr)
    mu = float(params.mu)
    out = np.sign(arr) * (np.power(1.0 + mu, np.abs(arr)) - 1.0) / mu
    return float(out) if out.ndim == 0 else out


def quantize_array(x, params: CompandingParams = DEFAULT_PARAMS) -> np.ndarray:
    y = np.asarray(mulaw_compand(np.asarray(x, dtype=np.float64), params))
    c = np.floor((y + 1.0) / 2.0 * params.num_classes).astype(np.int64)
    return np.clip(c, 0, params.num_classes - 1)


def dequantize_array(c, params: CompandingParams = DEFAULT_PARAMS) -> np.ndarray:
    c = np.asarray(c)
    _check_classes(c, params.num_classes)
    y = 2.0 * (c.astype(np.float64) + 0.5) / params.num_classes - 1.0
    return np.asarray(mulaw_expand(y, params))


def quantize(w: ContinuousWaveform, params: CompandingParams = DEFAULT_PARAMS) -> QuantizedWaveform:
    return QuantizedWaveform(quantize_array(w.samples, params), w.sample_rate_hz, params.num_classes)


def dequantize(q: QuantizedWaveform, params: CompandingParams = DEFAULT_PARAMS) -> ContinuousWaveform:
    if q.num_classes != params.num_classes:
        raise ConfigError(
            f"waveform has {q.num_classes} classes but codec expects {params.num_classes}"
        )
    return ContinuousWaveform(dequantize_array(q.classes, params), q.sample_rate_hz)


def bin_edges(params: CompandingParams = DEFAULT_PARAMS) -> np.ndarray:
    """Bin boundaries in the linear amplitude domain, ``num_classes + 1`` values."""
    y = np.linspace(-1.0, 1.0, params.num_classes + 1)
    return np.asarray(mulaw_expand(y, params))


def roundtrip_sweep(num_points: int = 10_001, params: CompandingParams = DEFAULT_PARAMS) -> dict:
    """Max errors of expand(compand(x)) and dequantize(quantize(x)) over a uniform grid."""
    x = np.linspace(-1.0, 1.0, num_points)
    compand_err = float(np.max(np.abs(mulaw_expand(mulaw_compand(x, params), params) - x)))
    quant_err = float(np.max(np.abs(dequantize_array(quantize_array(x, params), params) - x)))
    return {"compand_roundtrip": compand_err, "quantize_roundtrip": quant_err}
