"""tsmem: time-series classification with a linear-cost dual-memory encoder."""

from .rng import RngState
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["RngState", "Tensor", "backward", "no_grad", "__version__"]
