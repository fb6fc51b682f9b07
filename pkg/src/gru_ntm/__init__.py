"""GRU + Neural Turing Machine classifier for Normal / DoS / DDoS traffic windows."""

from .data import CLASS_NAMES
from .model import ModelConfig, ModelParams, forward, backward, predict
from .ntm import NtmConfig
from .training import TrainConfig, train

__version__ = "0.1.0"
