"""Two-stream (AlexNet-lite + SqueezeNet-lite) ConvLSTM fusion for violence detection in video clips."""

from .model import ModelConfig, ModelParams, build_model, forward_batch, model_forward
from .tensor import Tensor, no_grad

__all__ = ["ModelConfig", "ModelParams", "Tensor", "build_model", "forward_batch", "model_forward", "no_grad"]
__version__ = "0.1.0"
