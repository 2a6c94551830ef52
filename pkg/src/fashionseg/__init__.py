"""CPU deep-learning engine for human-body segmentation and clothing-fashion
classification: tensor autodiff core, the two networks, metrics, data I/O,
and a training/evaluation CLI."""

from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "__version__"]
