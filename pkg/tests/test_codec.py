import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wavenet import codec
from wavenet.codec import CompandingParams, ContinuousWaveform, QuantizedWaveform
from wavenet.errors import DataError, DomainError

unit = st.floats(-1.0, 1.0, allow_nan=False)

# ln(26.5)/ln(256), 40-digit mpmath evaluation
COMPAND_0_1 = 0.5909900568203998974


def test_compand_fixed_points():
    assert codec.mulaw_compand(0.0) == 0.0
    assert codec.mulaw_compand(1.0) == 1.0
    assert codec.mulaw_compand(-1.0) == -1.0
    assert codec.mulaw_compand(0.1) == pytest.approx(COMPAND_0_1, abs=1e-9)


def test_expand_fixed_points():
    assert codec.mulaw_expand(0.0) == 0.0
    assert codec.mulaw_expand(1.0) == 1.0
    assert codec.mulaw_expand(COMPAND_0_1) == pytest.approx(0.1, abs=1e-12)


@pytest.mark.parametrize("bad", [1.0000001, -2.0, float("nan")])
def test_domain_errors_name_the_value(bad):
    with pytest.raises(DomainError, match="outside"):
        codec.mulaw_compand(bad)
    with pytest.raises(DomainError):
        codec.mulaw_expand(bad)


def test_roundtrip_grid():
    x = np.linspace(-1, 1, 10_001)
    assert np.max(np.abs(codec.mulaw_expand(codec.mulaw_compand(x)) - x)) <= 1e-7


@given(unit)
def test_odd_symmetry(x):
    assert codec.mulaw_compand(-x) == -codec.mulaw_compand(x)


@given(unit, unit)
def test_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert codec.mulaw_compand(lo) <= codec.mulaw_compand(hi)
    assert codec.quantize_array(lo) <= codec.quantize_array(hi)


@given(unit)
def test_roundtrip_property(x):
    assert abs(codec.mulaw_expand(codec.mulaw_compand(x)) - x) <= 1e-6


def test_quantize_edges():
    q = codec.quantize(ContinuousWaveform(np.array([-1.0, 0.0, 1.0]), 16000))
    assert q.classes.tolist() == [0, 128, 255]
    assert q.sample_rate_hz == 16000


def test_dequantize_bin_centres():
    # mpmath: expand(1/256), expand(-1 + 1/256)
    w = codec.dequantize(QuantizedWaveform(np.array([128, 0]), 8000))
    assert w.samples[0] == pytest.approx(8.587117119261442e-05, rel=1e-12)
    assert w.samples[1] == pytest.approx(-0.9784880309586323, rel=1e-12)


def test_quantize_dequantize_identity_on_classes():
    c = np.arange(256)
    assert np.array_equal(codec.quantize_array(codec.dequantize_array(c)), c)


def test_sine_roundtrip_error_bound():
    n = np.arange(16000)
    for amp in (0.1, 0.5, 0.9, 1.0):
        x = amp * np.sin(2 * np.pi * 440 * n / 16000)
        err = np.max(np.abs(codec.dequantize_array(codec.quantize_array(x)) - x))
        assert err < 0.04


def test_error_bounded_by_local_bin_width():
    x = np.linspace(-1, 1, 5001)
    c = codec.quantize_array(x)
    edges = codec.bin_edges()
    width = edges[c + 1] - edges[c]
    assert np.all(np.abs(codec.dequantize_array(c) - x) <= width + 1e-12)


def test_bins_finer_near_zero():
    w = np.diff(codec.bin_edges())
    assert w[-1] / w[128] > 10


def test_class_range_checked():
    with pytest.raises(DataError):
        QuantizedWaveform(np.array([0, 256]), 16000)
    with pytest.raises(DataError):
        codec.dequantize_array(np.array([-1]))


def test_waveform_range_checked():
    with pytest.raises(DomainError):
        ContinuousWaveform(np.array([0.0, 1.5]), 16000)


def test_configurable_class_count():
    p = CompandingParams(mu=15, num_classes=16)
    c = codec.quantize_array(np.array([-1.0, 0.0, 1.0]), p)
    assert c.tolist() == [0, 8, 15]
