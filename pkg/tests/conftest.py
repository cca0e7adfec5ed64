import numpy as np
import pytest
from hypothesis import settings

from wavenet.model import (
    ClassifierConfig,
    ContextStackConfig,
    LocalCondConfig,
    ModelConfig,
    WaveNetModel,
    init_params,
)

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def generic_model(config, seed=0, dtype=np.float64):
    """All weights and biases random, so every path is live."""
    return WaveNetModel(config, init_params(config, seed, dtype, neutral=False))


def central_difference(f, x, eps=1e-6):
    """Gradient of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2 * eps)
    return g


def rel_error(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    return ModelConfig(num_classes=16, residual_channels=4, skip_channels=4, dilation_schedule=(1, 2, 4))


@pytest.fixture
def full_config():
    """Every optional path switched on, still tiny."""
    return ModelConfig(
        num_classes=16, residual_channels=4, skip_channels=4, filter_width=2,
        dilation_schedule=(1, 2),
        global_cond_dim=2,
        local_cond=LocalCondConfig(2, 4, "transposed"),
        context_stacks=(ContextStackConfig((1, 2), 3, 4),),
        classifier=ClassifierConfig(2, 8),
    )


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
