"""WaveNet: dilated causal convolutions over mu-law quantized audio, in numpy."""

from .codec import (
    CompandingParams,
    ContinuousWaveform,
    QuantizedWaveform,
    dequantize,
    mulaw_compand,
    mulaw_expand,
    quantize,
)
from .model import (
    ClassifierConfig,
    ConditioningInput,
    ContextStackConfig,
    LocalCondConfig,
    ModelConfig,
    WaveNetModel,
    doubling_schedule,
    load_checkpoint,
    receptive_field,
    save_checkpoint,
)
from .sampler import GenerationRequest, generate
from .training import Clip, TrainConfig, train

__all__ = [
    "ClassifierConfig", "Clip", "CompandingParams", "ConditioningInput", "ContextStackConfig",
    "ContinuousWaveform", "GenerationRequest", "LocalCondConfig", "ModelConfig", "QuantizedWaveform",
    "TrainConfig", "WaveNetModel", "dequantize", "doubling_schedule", "generate", "load_checkpoint",
    "mulaw_compand", "mulaw_expand", "quantize", "receptive_field", "save_checkpoint", "train",
]
