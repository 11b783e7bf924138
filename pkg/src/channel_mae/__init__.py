"""Masked-autoencoder foundation model for complex wireless channel matrices."""

from .chansynth import ChannelDataset, SystemConfig, generate_dataset, read_dataset
from .model import Checkpoint, ModelConfig, load_checkpoint, save_checkpoint
from .objectives import LossConfig
from .patchpipe import PatchConfig
from .trainer import TrainConfig, pretrain_contra, pretrain_wimae

__all__ = [
    "ChannelDataset", "Checkpoint", "LossConfig", "ModelConfig", "PatchConfig",
    "SystemConfig", "TrainConfig", "generate_dataset", "load_checkpoint",
    "pretrain_contra", "pretrain_wimae", "read_dataset", "save_checkpoint",
]

__version__ = "0.1.0"
