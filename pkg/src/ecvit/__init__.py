"""ECViT: convolution-enhanced vision transformer with partitioned
attention and pyramid token merging, on a self-contained autodiff engine."""

__version__ = "0.1.0"

from ._kernels import get_backend
from .pyramid import ModelConfig, build_model, default_config, forward, micro_config, validate_config
from .tensor import Tensor, no_grad, tensor

__all__ = [
    "ModelConfig",
    "Tensor",
    "build_model",
    "default_config",
    "forward",
    "get_backend",
    "micro_config",
    "no_grad",
    "tensor",
    "validate_config",
    "__version__",
]
