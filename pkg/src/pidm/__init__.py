"""Learned spatial and spectral degradation models for hyperspectral/multispectral fusion."""

__version__ = "0.1.0"

from .model import ModelConfig, PidmModel, load, save  # noqa: E402
from .selftrain import TrainConfig, train  # noqa: E402

__all__ = ["ModelConfig", "PidmModel", "TrainConfig", "train", "load", "save", "__version__"]
