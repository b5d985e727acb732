"""Density-map object counting for remote-sensing imagery.

The network combines a truncated VGG-16 front-end, channel/spatial
attention, a dilated scale pyramid and deformable convolutions, all on a
small NumPy autodiff core.
"""

from .errors import SkycountError
from .layers import AttentionArrangement
from .model import ModelConfig, Variant, build_model, forward, predict_count
from .tensor import Tensor, make_rng, no_grad

__version__ = "0.1.0"

__all__ = ["AttentionArrangement", "ModelConfig", "SkycountError", "Tensor", "Variant",
           "build_model", "forward", "make_rng", "no_grad", "predict_count"]
