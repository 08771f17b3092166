import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.core.exceptions import ShapeMismatchError
from app.schemas.imaging import Homography, RenderParams
from app.schemas.simulation import NoiseParams, Reference, SceneSource, SimulationConfig
from app.services import scene_service
from app.services.imaging_service import LinearImage, check_image, check_same_shape, warp_image

logger = logging.getLogger(__name__)


@dataclass
class SamplePair:
    """
    One simulated training/evaluation sample.

    ``y`` is noise-free and aligned to the reference capture. ``clean_nf`` and
    ``clean_f`` are the noise-free inputs in their captured frames (after warping).
    """
    x_f: LinearImage
    x_nf: LinearImage
    noise_map_f: LinearImage
    noise_map_nf: LinearImage
    y: LinearImage
    render: RenderParams
    noise: NoiseParams
    homography: Homography
    reference: Reference
    dim_factor: float
    clean_f: Optional[LinearImage] = field(default=None, repr=False)
    clean_nf: Optional[LinearImage] = field(default=None, repr=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.y.shape[0], self.y.shape[1]


# ---------------------------------------------------------------------------
# Capture model
# ---------------------------------------------------------------------------

def compose_pair(
    ambient: LinearImage,
    flash_only: LinearImage,
    dim_factor: float,
    flash_gain: float = 2.0,
) -> Tuple[LinearImage, LinearImage]:
    """
    Dim the ambient image and add the brightened flash-only appearance.

    Returns:
        A tuple of (clean_nf, clean_f) with clean_nf = ambient / dim_factor and
        clean_f = flash_gain * flash_only + clean_nf
    """
    if dim_factor < 1.0:
        raise ValueError(f"dim_factor must be >= 1, got {dim_factor}")
    ambient = check_image(ambient, "ambient")
    flash_only = check_image(flash_only, "flash_only")
    check_same_shape(ambient, flash_only)
    clean_nf = ambient / dim_factor
    clean_f = flash_gain * flash_only + clean_nf
    return clean_nf, clean_f


def add_noise(img: LinearImage, noise: NoiseParams, rng: np.random.Generator) -> LinearImage:
    """Add heteroscedastic Gaussian noise with variance sigma_r^2 + sigma_s^2 * x (no clipping)"""
    img = check_image(img)
    if np.any(img < 0):
        raise ValueError("noise-free input must be nonnegative")
    std = np.sqrt(noise.sigma_r ** 2 + noise.sigma_s ** 2 * img)
    return img + std * rng.standard_normal(img.shape)


def noise_stddev_map(noisy_img: LinearImage, noise: NoiseParams) -> LinearImage:
    """Per-pixel noise stddev estimated from the observed intensities"""
    noisy_img = np.asarray(noisy_img, dtype=np.float64)
    return np.sqrt(noise.sigma_r ** 2 + noise.sigma_s ** 2 * np.maximum(0.0, noisy_img))


# ---------------------------------------------------------------------------
# Misalignment
# ---------------------------------------------------------------------------

def intrinsics(height: int, width: int, fov_degrees: float = 90.0) -> np.ndarray:
    """Pinhole intrinsics with the given horizontal FOV and the principal point at the image center"""
    focal = (width / 2.0) / math.tan(math.radians(fov_degrees) / 2.0)
    return np.array([
        [focal, 0.0, (width - 1) / 2.0],
        [0.0, focal, (height - 1) / 2.0],
        [0.0, 0.0, 1.0],
    ])


def rotation_matrix(rotation_degrees: List[float]) -> np.ndarray:
    rx, ry, rz = (math.radians(a) for a in rotation_degrees)
    rot_x = np.array([[1, 0, 0], [0, math.cos(rx), -math.sin(rx)], [0, math.sin(rx), math.cos(rx)]])
    rot_y = np.array([[math.cos(ry), 0, math.sin(ry)], [0, 1, 0], [-math.sin(ry), 0, math.cos(ry)]])
    rot_z = np.array([[math.cos(rz), -math.sin(rz), 0], [math.sin(rz), math.cos(rz), 0], [0, 0, 1]])
    return rot_z @ rot_y @ rot_x


def build_homography(
    height: int,
    width: int,
    rotation_degrees: List[float],
    scale: float,
    translation_px: List[float],
    fov_degrees: float = 90.0,
) -> Homography:
    """H = T . S . (K R K^-1): camera rotation, then scaling about the center, then translation"""
    matrix = np.eye(3)
    if any(a != 0.0 for a in rotation_degrees):
        k = intrinsics(height, width, fov_degrees)
        matrix = k @ rotation_matrix(rotation_degrees) @ np.linalg.inv(k)

    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    scaling = np.array([[scale, 0.0, cx * (1.0 - scale)], [0.0, scale, cy * (1.0 - scale)], [0.0, 0.0, 1.0]])
    shift = np.array([[1.0, 0.0, translation_px[0]], [0.0, 1.0, translation_px[1]], [0.0, 0.0, 1.0]])
    matrix = shift @ scaling @ matrix
    return Homography.from_array(
        matrix / matrix[2, 2],
        rotation_degrees=[float(a) for a in rotation_degrees],
        scale=float(scale),
        translation_px=[float(t) for t in translation_px],
    )


def sample_homography(
    rng: np.random.Generator,
    height: int,
    width: int,
    config: Optional[SimulationConfig] = None,
    range_scale: float = 1.0,
) -> Homography:
    """
    Sample a small camera shake.

    Rotation is uniform in [-r, r] degrees per axis, scale uniform in the
    configured range, and translation uniform in [0, t] px per axis with a
    uniformly random sign. ``range_scale`` stretches every range about its
    neutral value (used to target a given mean displacement).
    """
    config = config or SimulationConfig()
    max_rotation = config.rotation_degrees * range_scale
    rotation = rng.uniform(-max_rotation, max_rotation, size=3) if max_rotation > 0 else np.zeros(3)
    low, high = config.scale_range
    scale = 1.0 + rng.uniform(low - 1.0, high - 1.0) * range_scale
    magnitude = rng.uniform(0.0, config.translation_px * range_scale, size=2)
    signs = rng.choice([-1.0, 1.0], size=2)
    return build_homography(
        height, width, rotation.tolist(), scale, (magnitude * signs).tolist(), config.fov_degrees
    )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_dim_factor(rng: np.random.Generator, dim_range: Tuple[float, float]) -> float:
    """Log-uniform dimming factor"""
    low, high = dim_range
    return float(math.exp(rng.uniform(math.log(low), math.log(high))))


def sample_noise_params(rng: np.random.Generator, config: SimulationConfig) -> NoiseParams:
    """Log10-uniform read and shot noise"""
    log_r = rng.uniform(*config.log_sigma_r_range)
    log_s = rng.uniform(*config.log_sigma_s_range)
    return NoiseParams.from_log10(log_r, log_s)


def make_sample(
    ambient: LinearImage,
    flash_only: LinearImage,
    dim_factor: float,
    noise: NoiseParams,
    h: Homography,
    reference: Reference,
    rng: np.random.Generator,
    color_matrix: Optional[List[List[float]]] = None,
    flash_gain: float = 2.0,
) -> SamplePair:
    """
    Simulate a low-light flash / no-flash capture of a scene.

    The non-reference clean image is warped by h, both captures get independent
    noise with the same parameters, and the ground truth is the clean dimmed
    ambient image in the reference frame (the scene frame).
    """
    reference = Reference(reference)
    clean_nf, clean_f = compose_pair(ambient, flash_only, dim_factor, flash_gain)
    if reference == Reference.NOFLASH:
        clean_f = warp_image(clean_f, h)
    else:
        clean_nf = warp_image(clean_nf, h)
    y = ambient / dim_factor

    x_nf = add_noise(clean_nf, noise, rng)
    x_f = add_noise(clean_f, noise, rng)

    render = RenderParams(gain=dim_factor)
    if color_matrix is not None:
        render = RenderParams(gain=dim_factor, color_matrix=color_matrix)

    return SamplePair(
        x_f=x_f,
        x_nf=x_nf,
        noise_map_f=noise_stddev_map(x_f, noise),
        noise_map_nf=noise_stddev_map(x_nf, noise),
        y=y,
        render=render,
        noise=noise,
        homography=h,
        reference=reference,
        dim_factor=float(dim_factor),
        clean_f=clean_f,
        clean_nf=clean_nf,
    )


def observed_pair(
    x_nf: LinearImage,
    x_f: LinearImage,
    noise: NoiseParams,
    render: Optional[RenderParams] = None,
    reference: Reference = Reference.NOFLASH,
) -> SamplePair:
    """Wrap a captured pair for inference; the unknown ground truth is left at zero"""
    x_nf = check_image(x_nf, "x_nf")
    x_f = check_image(x_f, "x_f")
    check_same_shape(x_nf, x_f)
    render = render or RenderParams()
    return SamplePair(
        x_f=x_f,
        x_nf=x_nf,
        noise_map_f=noise_stddev_map(x_f, noise),
        noise_map_nf=noise_stddev_map(x_nf, noise),
        y=np.zeros_like(x_nf),
        render=render,
        noise=noise,
        homography=Homography.identity(),
        reference=Reference(reference),
        dim_factor=render.gain,
    )


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent RNG stream for sample ``index`` of a run seeded with ``seed``"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def load_scene(
    config: SimulationConfig,
    rng: np.random.Generator,
    size: int,
) -> Tuple[LinearImage, LinearImage, Optional[List[List[float]]]]:
    """Draw one (ambient, flash_only, color_matrix) scene from the configured source"""
    if config.source == SceneSource.FILES:
        scenes = scene_service.list_scene_dirs(config.dataset_dir, config.split)
        scene_dir = scenes[int(rng.integers(0, len(scenes)))]
        ambient, flash_only, color_matrix = scene_service.load_scene_pair(scene_dir)
        ambient, flash_only = scene_service.crop_pair(ambient, flash_only, size, rng)
        return ambient, flash_only, color_matrix
    scene_seed = int(rng.integers(0, 2 ** 63 - 1))
    ambient, flash_only = scene_service.generate_scene(scene_seed, size, size)
    return ambient, flash_only, None


def sample_training_sample(
    config: SimulationConfig,
    seed: int,
    index: int,
    dim_factor: Optional[float] = None,
    noise: Optional[NoiseParams] = None,
    range_scale: float = 1.0,
    reference: Optional[Reference] = None,
) -> SamplePair:
    """
    Draw sample ``index`` of the stream defined by (config, seed).

    Dimming, noise and homography are sampled from the configured ranges
    unless fixed by the caller; the same arguments always give the same sample.
    """
    rng = sample_rng(seed, index)
    size = config.crop_size
    ambient, flash_only, color_matrix = load_scene(config, rng, size)

    # Draw every random quantity even when fixed so streams stay aligned
    sampled_dim = sample_dim_factor(rng, config.dim_range)
    sampled_noise = sample_noise_params(rng, config)
    h = sample_homography(rng, size, size, config, range_scale)
    if range_scale == 0.0:
        h = Homography.identity()

    return make_sample(
        ambient,
        flash_only,
        dim_factor if dim_factor is not None else sampled_dim,
        noise if noise is not None else sampled_noise,
        h,
        reference if reference is not None else config.reference,
        rng,
        color_matrix=color_matrix,
        flash_gain=config.flash_gain,
    )


def validate_sample(sample: SamplePair, atol: float = 1e-9) -> List[str]:
    """
    Check the SamplePair invariants.

    Returns:
        A list of violation messages; empty when the sample is valid
    """
    problems = []
    try:
        for name in ("x_f", "x_nf", "noise_map_f", "noise_map_nf", "y"):
            check_image(getattr(sample, name), name)
            check_same_shape(getattr(sample, name), sample.y)
    except ShapeMismatchError as e:
        return [str(e)]

    if np.any(sample.y < 0):
        problems.append("ground truth has negative values")
    for name in ("noise_map_f", "noise_map_nf"):
        if np.any(getattr(sample, name) < sample.noise.sigma_r - atol):
            problems.append(f"{name} has values below sigma_r")
    if abs(sample.render.gain - sample.dim_factor) > atol * max(1.0, sample.dim_factor):
        problems.append("render gain does not undo the dimming factor")
    if sample.dim_factor < 1.0:
        problems.append("dim_factor below 1")
    if not (np.all(np.isfinite(sample.x_f)) and np.all(np.isfinite(sample.x_nf))):
        problems.append("noisy inputs contain non-finite values")
    if sample.clean_nf is not None and sample.reference == Reference.NOFLASH:
        if not np.allclose(sample.clean_nf, sample.y, atol=atol):
            problems.append("ground truth is not the unwarped clean no-flash image")
    if abs(np.linalg.det(sample.homography.array)) < 1e-12:
        problems.append("homography is singular")
    return problems
