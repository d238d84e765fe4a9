"""vidfuse: multimodal video-classification toolkit.

Recurrent stream models with exact BPTT gradients, a feature fusion network
trained by proximal gradient descent with combined row-group and
elementwise sparsity, linear score fusion, confusion-matrix contextual
refinement, evaluation metrics, and a deterministic experiment pipeline
over synthetic or on-disk multimodal datasets.
"""

from .errors import (ConfigError, DataError, NumericalError, ShapeError,
                     VidfuseError)
from .linalg import (RngStream, apply_sigmoid, apply_tanh, init_weights,
                     matmul, softmax_rows)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "NumericalError", "ShapeError", "VidfuseError",
    "RngStream", "apply_sigmoid", "apply_tanh", "init_weights", "matmul",
    "softmax_rows", "__version__",
]
