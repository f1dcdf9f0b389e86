"""Joint driving-caption and control-signal model built on a small numpy autodiff engine."""

from .model import AdaptModel, TrainConfig
from .train import Trainer

__all__ = ["AdaptModel", "TrainConfig", "Trainer"]
__version__ = "0.1.0"
