import math
from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

__all__ = ["Reference", "SceneSource", "NoiseParams", "SimulationConfig"]


class Reference(str, Enum):
    """Which capture the output is geometrically aligned to"""
    NOFLASH = "noflash"
    FLASH = "flash"


class SceneSource(str, Enum):
    PROCEDURAL = "procedural"
    FILES = "files"


class NoiseParams(BaseModel):
    """Read/shot noise: variance = sigma_r**2 + sigma_s**2 * x"""
    model_config = ConfigDict(extra="forbid")

    sigma_r: float = Field(..., gt=0)
    sigma_s: float = Field(..., ge=0)

    @classmethod
    def from_log10(cls, log_sigma_r: float, log_sigma_s: float) -> "NoiseParams":
        return cls(sigma_r=10.0 ** log_sigma_r, sigma_s=10.0 ** log_sigma_s)

    @property
    def log10(self) -> Tuple[float, float]:
        log_s = math.log10(self.sigma_s) if self.sigma_s > 0 else float("-inf")
        return math.log10(self.sigma_r), log_s


def _ordered(value: Tuple[float, float], name: str) -> Tuple[float, float]:
    low, high = value
    if low > high:
        raise ValueError(f"{name} must be (low, high)")
    return float(low), float(high)


class SimulationConfig(BaseModel):
    """Sampling ranges for training/evaluation pairs"""
    model_config = ConfigDict(extra="forbid")

    crop_size: int = 440
    dim_range: Tuple[float, float] = (2.0, 50.0)
    log_sigma_r_range: Tuple[float, float] = (-3.0, -2.0)
    log_sigma_s_range: Tuple[float, float] = (-4.0, -2.6)
    rotation_degrees: float = Field(0.5, ge=0)
    scale_range: Tuple[float, float] = (0.98, 1.02)
    translation_px: float = Field(2.0, ge=0)
    fov_degrees: float = Field(90.0, gt=0, lt=180)
    flash_gain: float = Field(2.0, ge=0)
    reference: Reference = Reference.NOFLASH
    source: SceneSource = SceneSource.PROCEDURAL
    dataset_dir: Optional[str] = None
    split: str = "train"

    @field_validator("crop_size")
    @classmethod
    def validate_crop_size(cls, value):
        if value < 32 or value % 32 != 0:
            raise ValueError("crop_size must be a positive multiple of 32")
        return value

    @field_validator("dim_range")
    @classmethod
    def validate_dim_range(cls, value):
        low, high = _ordered(value, "dim_range")
        if low < 1.0:
            raise ValueError("dim_range values must be >= 1")
        return low, high

    @field_validator("log_sigma_r_range", "log_sigma_s_range", "scale_range")
    @classmethod
    def validate_ranges(cls, value, info):
        return _ordered(value, info.field_name)

    @model_validator(mode="after")
    def validate_source(self):
        if self.source == SceneSource.FILES and not self.dataset_dir:
            raise ValueError("dataset_dir is required when source is 'files'")
        return self
