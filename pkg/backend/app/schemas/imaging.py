from enum import Enum
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

__all__ = ["Gamma", "RenderParams", "Homography", "ImageSidecar", "IDENTITY_3X3"]

IDENTITY_3X3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]


def _check_3x3(value: List[List[float]]) -> List[List[float]]:
    if len(value) != 3 or any(len(row) != 3 for row in value):
        raise ValueError("matrix must be 3x3")
    return [[float(v) for v in row] for row in value]


class Gamma(str, Enum):
    """Gamma curve applied at the end of rendering"""
    SRGB = "srgb"
    LINEAR = "linear"


class RenderParams(BaseModel):
    """Rendering from linear camera RGB to display sRGB: gamma(gain * C @ x)"""
    model_config = ConfigDict(extra="forbid")

    gain: float = Field(1.0, gt=0)
    color_matrix: List[List[float]] = Field(default_factory=lambda: [row[:] for row in IDENTITY_3X3])
    gamma: Gamma = Gamma.SRGB

    @field_validator("color_matrix")
    @classmethod
    def validate_color_matrix(cls, value):
        return _check_3x3(value)

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.color_matrix, dtype=np.float64)


class Homography(BaseModel):
    """
    Planar warp between the two captures.

    ``matrix`` maps reference pixel coordinates (x, y, 1) to warped coordinates and
    is normalized so that its last element is 1. The provenance fields record the
    parameters it was sampled from.
    """
    model_config = ConfigDict(extra="forbid")

    matrix: List[List[float]] = Field(default_factory=lambda: [row[:] for row in IDENTITY_3X3])
    rotation_degrees: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    scale: float = 1.0
    translation_px: List[float] = Field(default_factory=lambda: [0.0, 0.0])

    @field_validator("matrix")
    @classmethod
    def validate_matrix(cls, value):
        value = _check_3x3(value)
        if value[2][2] != 0.0:
            last = value[2][2]
            value = [[v / last for v in row] for row in value]
        return value

    @field_validator("rotation_degrees")
    @classmethod
    def validate_rotation(cls, value):
        if len(value) != 3:
            raise ValueError("rotation_degrees must have 3 entries")
        return value

    @field_validator("translation_px")
    @classmethod
    def validate_translation(cls, value):
        if len(value) != 2:
            raise ValueError("translation_px must have 2 entries")
        return value

    @classmethod
    def identity(cls) -> "Homography":
        return cls()

    @classmethod
    def from_array(cls, matrix: np.ndarray, **provenance) -> "Homography":
        return cls(matrix=np.asarray(matrix, dtype=np.float64).tolist(), **provenance)

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        matrix = [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]
        return cls(matrix=matrix, translation_px=[tx, ty])

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=np.float64)

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.array, np.eye(3)))


class ImageSidecar(BaseModel):
    """
    JSON sidecar stored next to a 16-bit PNG as ``<name>.json``.

    Matrices are stored row-major as 9 floats.
    """
    model_config = ConfigDict(extra="ignore")

    gain: float = Field(1.0, gt=0)
    color_matrix: List[float] = Field(default_factory=lambda: [float(v) for row in IDENTITY_3X3 for v in row])
    gamma: Gamma = Gamma.SRGB
    sigma_r: float = 0.0
    sigma_s: float = 0.0
    homography: List[float] = Field(default_factory=lambda: [float(v) for row in IDENTITY_3X3 for v in row])

    @field_validator("color_matrix", "homography")
    @classmethod
    def validate_flat_3x3(cls, value):
        if len(value) != 9:
            raise ValueError("expected 9 row-major values")
        return [float(v) for v in value]

    @property
    def render_params(self) -> RenderParams:
        matrix = np.asarray(self.color_matrix).reshape(3, 3).tolist()
        return RenderParams(gain=self.gain, color_matrix=matrix, gamma=self.gamma)

    @property
    def homography_matrix(self) -> Homography:
        return Homography(matrix=np.asarray(self.homography).reshape(3, 3).tolist())
