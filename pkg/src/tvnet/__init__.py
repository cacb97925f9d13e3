"""TVNet: dynamic-convolution time-series model on a small numpy autodiff engine."""
from .config import TaskConfig, size_channels
from .model import TVNet
from .tensor import Tensor, grad_check

__all__ = ["TaskConfig", "TVNet", "Tensor", "grad_check", "size_channels"]
__version__ = "0.1.0"
