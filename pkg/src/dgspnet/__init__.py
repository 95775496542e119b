"""Language-prompt-driven infrared small-target segmentation."""

from .config import Config, ModelConfig, TrainConfig, full_config, toy_config
from .network import DGSPNet, ReconstructionNet
from .prompt import TextBundle, build_template

__all__ = [
    "Config", "ModelConfig", "TrainConfig", "toy_config", "full_config",
    "DGSPNet", "ReconstructionNet", "TextBundle", "build_template",
]
__version__ = "0.1.0"
