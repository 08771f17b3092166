from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

__all__ = ["TrainConfig", "TrainRecord", "TrainState"]


class TrainConfig(BaseModel):
    """Optimizer schedule and loop settings"""
    model_config = ConfigDict(extra="forbid")

    lr_init: float = Field(1e-4, gt=0)
    lr_drop_factor: float = Field(0.1, gt=0, le=1)
    max_drops: int = Field(2, ge=0)
    eta: float = Field(1.0, ge=0)
    batch_size: int = Field(4, ge=1)
    max_steps: int = Field(2000, ge=0)
    val_interval: int = Field(100, ge=1)
    # Validations without improvement of the best validation loss before a drop
    patience: int = Field(5, ge=1)
    n_val: int = Field(8, ge=1)
    checkpoint_interval: int = Field(1000, ge=1)
    seed: int = 0
    # Train on one fixed sample (overfit sanity runs)
    single_sample: bool = False


class TrainRecord(BaseModel):
    """One line of the JSON-lines training log"""
    step: int
    lr: float
    train_loss: float
    val_loss: Optional[float] = None
    val_psnr: Optional[float] = None


class TrainState(BaseModel):
    """Loop state stored in a checkpoint's config.json for resuming"""
    step: int = 0
    lr: float = 1e-4
    drops: int = 0
    best_val_loss: Optional[float] = None
    validations_since_best: int = 0
    history: List[TrainRecord] = Field(default_factory=list)
