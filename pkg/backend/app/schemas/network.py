from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.schemas.simulation import Reference

__all__ = ["Variant", "NetworkConfig"]


class Variant(str, Enum):
    OURS = "ours"
    SINGLE_IMAGE = "single_image"
    DIRECT_PREDICTION = "direct_prediction"
    KPN = "kpn"


class NetworkConfig(BaseModel):
    """Architecture of the prediction network and its baselines"""
    model_config = ConfigDict(extra="forbid")

    J: int = Field(90, ge=1)
    K: int = Field(15, ge=1)
    d: int = Field(4, ge=1)
    base_channels: int = Field(64, ge=1)
    variant: Variant = Variant.OURS
    reference: Reference = Reference.NOFLASH
    use_b: bool = True
    kpn_kernel_size: int = Field(5, ge=1)

    @field_validator("K", "kpn_kernel_size")
    @classmethod
    def validate_odd(cls, value, info):
        if value % 2 == 0:
            raise ValueError(f"{info.field_name} must be odd")
        return value

    @property
    def in_channels(self) -> int:
        return 6 if self.variant == Variant.SINGLE_IMAGE else 12

    @property
    def uses_basis(self) -> bool:
        return self.variant in (Variant.OURS, Variant.SINGLE_IMAGE)

    @property
    def footprint(self) -> int:
        return (self.K - 1) * self.d + 1

    @property
    def pixel_head_channels(self) -> int:
        if self.variant == Variant.OURS:
            return self.J + 3
        if self.variant == Variant.SINGLE_IMAGE:
            return self.J
        if self.variant == Variant.DIRECT_PREDICTION:
            return 3
        return 2 * 3 * self.kpn_kernel_size ** 2
