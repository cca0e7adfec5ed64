"""PCM16 mono WAV reading/writing and synthetic test signals."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import ContinuousWaveform
from .errors import ConfigError, FormatError, IntegrityError


@dataclass(frozen=True)
class WavSpec:
    sample_rate_hz: int
    bits_per_sample: int = 16
    channels: int = 1


def read_wav(path) -> ContinuousWaveform:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise IntegrityError(f"{path}: truncated RIFF header ({len(data)} bytes)")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF":
        raise FormatError(f"{path}: chunk id is {riff!r}, expected b'RIFF'")
    if wave != b"WAVE":
        raise FormatError(f"{path}: RIFF form type is {wave!r}, expected b'WAVE'")
    fmt = None
    pcm = None
    pos = 12
    while pos < len(data):
        if pos + 8 > len(data):
            raise IntegrityError(f"{path}: truncated chunk header at byte {pos}")
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8: pos + 8 + size]
        if len(body) < size:
            raise IntegrityError(f"{path}: chunk {cid!r} declares {size} bytes, only {len(body)} present")
        if cid == b"fmt ":
            if size < 16:
                raise IntegrityError(f"{path}: fmt chunk is {size} bytes, need 16")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format != 1:
        raise FormatError(f"{path}: audio_format is {audio_format}, only 1 (PCM) is supported")
    if channels != 1:
        raise FormatError(f"{path}: channels is {channels}, only mono is supported")
    if bits != 16:
        raise FormatError(f"{path}: bits_per_sample is {bits}, only 16 is supported")
    if block_align != 2:
        raise FormatError(f"{path}: block_align is {block_align}, expected 2")
    if rate <= 0:
        raise FormatError(f"{path}: sample_rate is {rate}")
    if pcm is None:
        raise FormatError(f"{path}: missing data chunk")
    if len(pcm) % 2:
        raise IntegrityError(f"{path}: data chunk has an odd byte count {len(pcm)}")
    ints = np.frombuffer(pcm, dtype="<i2")
    return ContinuousWaveform(ints.astype(np.float64) / 32768.0, rate)


def to_int16(samples) -> np.ndarray:
    """Scale by 32768, round half away from zero, clamp to the int16 range."""
    x = np.asarray(samples, dtype=np.float64) * 32768.0
    r = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(r, -32768, 32767).astype("<i2")


def write_wav(w: ContinuousWaveform, path) -> None:
    pcm = to_int16(w.samples).tobytes()
    rate = int(w.sample_rate_hz)
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, rate, rate * 2, 2, 16,
        b"data", len(pcm),
    )
    Path(path).write_bytes(header + pcm)


DEFAULT_TRANSITION = (
    (0.70, 0.10, 0.10, 0.10),
    (0.10, 0.60, 0.20, 0.10),
    (0.25, 0.25, 0.25, 0.25),
    (0.05, 0.15, 0.30, 0.50),
)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "sine"  # sine | sine_mixture | square | markov_noise
    frequency_hz: float = 440.0
    amplitude: float = 0.5
    duration_s: float = 1.0
    seed: int = 0
    sample_rate_hz: int = 16000
    frequencies: tuple[float, ...] = ()  # sine_mixture components; falls back to frequency_hz
    transition: tuple[tuple[float, ...], ...] = DEFAULT_TRANSITION  # markov_noise rows
    levels: tuple[float, ...] | None = None  # markov_noise state amplitudes, default evenly spaced

    def __post_init__(self):
        if self.kind not in ("sine", "sine_mixture", "square", "markov_noise"):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if not 0 <= self.amplitude <= 1:
            raise ConfigError(f"amplitude must lie in [0, 1], got {self.amplitude}")
        if self.sample_rate_hz <= 0 or self.duration_s <= 0:
            raise ConfigError("sample_rate_hz and duration_s must be positive")
        for f in self.frequencies or (self.frequency_hz,):
            if self.kind != "markov_noise" and not 0 <= f < self.sample_rate_hz / 2:
                raise ConfigError(f"frequency {f} Hz aliases at sample rate {self.sample_rate_hz} Hz")
        if self.kind == "markov_noise":
            P = np.asarray(self.transition, dtype=np.float64)
            if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0):
                raise ConfigError("transition must be a square row-stochastic matrix")
            if self.levels is not None and len(self.levels) != P.shape[0]:
                raise ConfigError(f"{len(self.levels)} levels for a {P.shape[0]}-state chain")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def markov_levels(self) -> np.ndarray:
        if self.levels is not None:
            return np.asarray(self.levels, dtype=np.float64)
        n = len(self.transition)
        return self.amplitude * np.linspace(-1.0, 1.0, n)


def markov_chain(transition, length: int, rng: np.random.Generator, start: int | None = None) -> np.ndarray:
    """State sequence of a first-order chain; the start state is drawn uniformly unless given."""
    P = np.asarray(transition, dtype=np.float64)
    cdf = np.cumsum(P, axis=1)
    states = np.empty(length, dtype=np.int64)
    s = int(rng.integers(len(P))) if start is None else start
    u = rng.random(length)
    for n in range(length):
        states[n] = s
        s = int(min(np.searchsorted(cdf[s], u[n] * cdf[s, -1], side="right"), len(P) - 1))
    return states


def stationary_distribution(transition) -> np.ndarray:
    P = np.asarray(transition, dtype=np.float64)
    vals, vecs = np.linalg.eig(P.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def markov_entropy_rate(transition) -> float:
    """Entropy rate in nats/step, ``sum_i pi_i H(P_i)``."""
    P = np.asarray(transition, dtype=np.float64)
    pi = stationary_distribution(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        rows = -np.sum(np.where(P > 0, P * np.log(P), 0.0), axis=1)
    return float(pi @ rows)


def synth(spec: SyntheticSpec) -> ContinuousWaveform:
    n = np.arange(spec.num_samples)
    rate = spec.sample_rate_hz
    if spec.kind == "sine":
        x = spec.amplitude * np.sin(2 * np.pi * spec.frequency_hz * n / rate)
    elif spec.kind == "sine_mixture":
        freqs = spec.frequencies or (spec.frequency_hz,)
        x = sum(np.sin(2 * np.pi * f * n / rate) for f in freqs) * (spec.amplitude / len(freqs))
    elif spec.kind == "square":
        x = spec.amplitude * np.where(np.sin(2 * np.pi * spec.frequency_hz * n / rate) >= 0, 1.0, -1.0)
    else:
        states = markov_chain(spec.transition, spec.num_samples, np.random.default_rng(spec.seed))
        x = spec.markov_levels()[states]
    return ContinuousWaveform(np.clip(x, -1.0, 1.0), rate)


def labeled_tones(frequencies, amplitude: float, num_frames: int, frame_length: int = 160,
                  run_frames: int = 4, sample_rate_hz: int = 16000, seed: int = 0):
    """Phase-continuous tone sequence switching among ``frequencies`` every ``run_frames`` frames.

    Returns the waveform and one label (tone index) per ``frame_length`` samples.
    """
    for f in frequencies:
        if not 0 <= f < sample_rate_hz / 2:
            raise ConfigError(f"frequency {f} Hz aliases at sample rate {sample_rate_hz} Hz")
    rng = np.random.default_rng(seed)
    runs = -(-num_frames // run_frames)
    run_labels = rng.integers(len(frequencies), size=runs)
    labels = np.repeat(run_labels, run_frames)[:num_frames]
    inst = np.asarray(frequencies, dtype=np.float64)[np.repeat(labels, frame_length)]
    phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(inst[:-1])]) / sample_rate_hz
    return ContinuousWaveform(amplitude * np.sin(phase), sample_rate_hz), labels
