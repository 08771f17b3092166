from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.schemas.simulation import NoiseParams, Reference

__all__ = ["EvalProtocol", "SweepRow", "CurvePoint", "NoiseRow"]


class EvalProtocol(BaseModel):
    """Benchmark protocol: dimming sweep, misalignment sweep and noise-level sweep"""
    model_config = ConfigDict(extra="forbid")

    dim_factors: List[float] = Field(default_factory=lambda: [100.0, 50.0, 25.0, 12.5])
    log_sigma_r: float = -2.6
    log_sigma_s: float = -3.6
    n_images: int = Field(64, ge=1)
    crop_size: int = 128
    displacement_bins: List[float] = Field(default_factory=lambda: [0.0, 2.0, 5.0, 10.0, 15.0, 20.0])
    misalignment_dim_factor: float = 50.0
    noise_levels: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(-2.8, -4.0), (-2.4, -3.2), (-2.2, -2.8)]
    )
    noise_level_dim_factor: float = 50.0
    reference: Reference = Reference.NOFLASH
    n_triptychs: int = Field(4, ge=0)
    seed: int = 1234

    @field_validator("crop_size")
    @classmethod
    def validate_crop_size(cls, value):
        if value < 32 or value % 32 != 0:
            raise ValueError("crop_size must be a positive multiple of 32")
        return value

    @property
    def noise(self) -> NoiseParams:
        return NoiseParams.from_log10(self.log_sigma_r, self.log_sigma_s)


class SweepRow(BaseModel):
    method: str
    dim_factor: float
    psnr: float
    ssim: float
    reference: Reference = Reference.NOFLASH


class CurvePoint(BaseModel):
    method: str
    target_displacement: float
    achieved_displacement: float
    psnr: float
    ssim: Optional[float] = None


class NoiseRow(BaseModel):
    method: str
    log_sigma_r: float
    log_sigma_s: float
    dim_factor: float
    psnr: float
    ssim: float
