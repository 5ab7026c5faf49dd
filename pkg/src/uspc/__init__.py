"""Joint text-to-speech and voice-conversion pipelines that share a
speaker encoder, prosody encoder, pitch predictor, decoder, and a
vector-quantized content codebook."""

from .config import ModelConfig, TrainConfig

__all__ = ["ModelConfig", "TrainConfig"]
__version__ = "0.1.0"
