from __future__ import annotations

from dataclasses import dataclass, field

from attnvo.data.images import AugmentConfig
from attnvo.nn.model import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 15
    learning_rate: float = 0.0005
    rotation_weight: float = 100.0
    max_epochs: int = 50
    early_stop_patience: int = 15
    monitor: str = "val"  # "val" or "train"
    seed: int = 0
    data_root: str = ""
    train_split: str = "train"
    val_split: str = "val"
    segment_min: int = 5
    segment_max: int = 7
    segment_stride: int = 1
    grad_clip: float = 0.0  # global-norm clipping; 0 disables
    augment_enabled: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rotation_weight <= 0:
            raise ValueError("rotation_weight must be > 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.monitor not in ("val", "train"):
            raise ValueError(f"monitor must be 'val' or 'train', got {self.monitor!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
