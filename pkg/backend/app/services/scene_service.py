"""
Scene sources for simulation: a procedural generator and a loader for
user-supplied ambient / flash-only pairs.

Both produce linear images in [0, 1] that share a single albedo, so the
ambient and flash-only appearances differ only by their shading.
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from app.core.exceptions import ShapeMismatchError
from app.schemas.imaging import IDENTITY_3X3
from app.services.imaging_service import LinearImage, check_image, load_image

logger = logging.getLogger(__name__)

SHADOW_LEVEL = 0.12


def _coords(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return ys / max(height - 1, 1), xs / max(width - 1, 1)


def _smooth_field(rng: np.random.Generator, height: int, width: int, sigma: float) -> np.ndarray:
    """Low-frequency random field normalized to [0, 1]"""
    field = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=sigma, mode="reflect")
    field -= field.min()
    peak = field.max()
    return field / peak if peak > 0 else np.zeros_like(field)


def _shape_masks(rng: np.random.Generator, height: int, width: int) -> List[np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    masks = []
    for _ in range(int(rng.integers(6, 15))):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(0.05, 0.2) * height
        rx = rng.uniform(0.05, 0.2) * width
        if rng.random() < 0.5:
            mask = (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx)
        else:
            mask = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
        masks.append(mask)
    return masks


def _albedo(rng: np.random.Generator, height: int, width: int, masks: List[np.ndarray]) -> np.ndarray:
    ys, xs = _coords(height, width)
    c0 = rng.uniform(0.2, 0.8, size=3)
    cx = rng.uniform(-0.3, 0.3, size=3)
    cy = rng.uniform(-0.3, 0.3, size=3)
    albedo = c0 + cx * xs[..., None] + cy * ys[..., None]

    for mask in masks:
        albedo[mask] = rng.uniform(0.05, 0.95, size=3)

    # Fine texture shared by all channels plus a weaker colored component
    texture = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=0.8)
    texture /= max(np.abs(texture).max(), 1e-12)
    color_texture = ndimage.gaussian_filter(rng.standard_normal((height, width, 3)), sigma=(1.0, 1.0, 0))
    color_texture /= max(np.abs(color_texture).max(), 1e-12)
    albedo = albedo * (1.0 + 0.35 * texture[..., None] + 0.1 * color_texture)
    return np.clip(albedo, 0.02, 1.0)


def _ambient_shading(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    sigma = max(height, width) / 6.0
    tint = rng.uniform(0.6, 1.0, size=3)
    shading = np.empty((height, width, 3))
    base = _smooth_field(rng, height, width, sigma)
    for c in range(3):
        own = _smooth_field(rng, height, width, sigma)
        shading[..., c] = tint[c] * (0.3 + 0.7 * (0.7 * base + 0.3 * own))
    return shading


def _flash_shading(rng: np.random.Generator, height: int, width: int, masks: List[np.ndarray]) -> np.ndarray:
    ys, xs = _coords(height, width)
    cy = 0.5 + rng.uniform(-0.1, 0.1)
    cx = 0.5 + rng.uniform(-0.1, 0.1)
    spread = rng.uniform(0.45, 0.8)
    intensity = rng.uniform(0.7, 1.0)
    falloff = intensity * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * spread ** 2))

    # Hard cast shadows: occluders offset away from the flash axis
    shadow = np.zeros((height, width), dtype=bool)
    for mask in masks:
        if rng.random() < 0.5:
            continue
        dy, dx = rng.integers(3, 11, size=2) * rng.choice([-1, 1], size=2)
        shifted = np.roll(mask, (int(dy), int(dx)), axis=(0, 1))
        shadow |= shifted & ~mask
    falloff = np.where(shadow, SHADOW_LEVEL * falloff, falloff)

    warmth = np.array([1.0, rng.uniform(0.9, 1.0), rng.uniform(0.8, 0.95)])
    return falloff[..., None] * warmth


def generate_scene(seed: int, height: int, width: int) -> Tuple[LinearImage, LinearImage]:
    """
    Generate a procedural (ambient, flash_only) pair.

    The two images share one albedo field; ambient uses a colored low-frequency
    shading field, flash-only a bright center-weighted falloff with hard cast
    shadows. Deterministic given seed.
    """
    if height < 32 or width < 32 or height % 32 or width % 32:
        raise ShapeMismatchError("scene dimensions must be multiples of 32")
    rng = np.random.default_rng(seed)
    masks = _shape_masks(rng, height, width)
    albedo = _albedo(rng, height, width, masks)
    ambient = np.clip(albedo * _ambient_shading(rng, height, width), 0.0, 1.0)
    flash_only = np.clip(albedo * _flash_shading(rng, height, width, masks), 0.0, 1.0)
    return ambient, flash_only


def list_scene_dirs(root: Union[str, Path], split: str) -> List[Path]:
    """Scene directories laid out as ``{root}/{split}/{id}/ambient.png, flash_only.png, meta.json``"""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"Dataset split not found: {split_dir}")
    scenes = sorted(
        p for p in split_dir.iterdir() if (p / "ambient.png").exists() and (p / "flash_only.png").exists()
    )
    if not scenes:
        raise FileNotFoundError(f"No scenes in {split_dir}")
    return scenes


def load_scene_pair(scene_dir: Union[str, Path]) -> Tuple[LinearImage, LinearImage, List[List[float]]]:
    """
    Load one user-supplied scene.

    Returns:
        A tuple of (ambient, flash_only, color_matrix); the color matrix comes
        from meta.json when present, identity otherwise.
    """
    scene_dir = Path(scene_dir)
    ambient, _ = load_image(scene_dir / "ambient.png")
    flash_only, _ = load_image(scene_dir / "flash_only.png")
    if ambient.shape != flash_only.shape:
        raise ShapeMismatchError(f"ambient and flash_only differ in size in {scene_dir}")

    color_matrix = [row[:] for row in IDENTITY_3X3]
    meta_path = scene_dir / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if "color_matrix" in meta:
            color_matrix = np.asarray(meta["color_matrix"], dtype=np.float64).reshape(3, 3).tolist()
    return ambient, flash_only, color_matrix


def crop_pair(
    ambient: LinearImage,
    flash_only: LinearImage,
    size: int,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[LinearImage, LinearImage]:
    """Crop both images to size x size; centered unless an rng is given"""
    ambient = check_image(ambient, "ambient")
    height, width = ambient.shape[:2]
    if height < size or width < size:
        raise ShapeMismatchError(f"scene {height}x{width} is smaller than crop size {size}")
    if rng is None:
        top, left = (height - size) // 2, (width - size) // 2
    else:
        top = int(rng.integers(0, height - size + 1))
        left = int(rng.integers(0, width - size + 1))
    window = (slice(top, top + size), slice(left, left + size))
    return ambient[window].copy(), flash_only[window].copy()
