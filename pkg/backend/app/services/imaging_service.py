import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import cv2
import numpy as np
import numpy.typing as npt
import torch
from scipy import ndimage
from skimage.metrics import structural_similarity

from app.core.exceptions import DegenerateHomographyError, ShapeMismatchError
from app.schemas.imaging import Gamma, Homography, ImageSidecar, RenderParams
from app.schemas.simulation import NoiseParams

# Configure logging
logger = logging.getLogger(__name__)

# H x W x 3 linear camera RGB raster
LinearImage = npt.NDArray[np.floating]

PNG_SCALE_16 = 65535.0
PNG_SCALE_8 = 255.0

SRGB_THRESHOLD = 0.0031308
SRGB_SLOPE = 12.92
SRGB_A = 0.055
SRGB_GAMMA = 1.0 / 2.4

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate an H x W x 3 raster and return it as a floating array"""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatchError(f"{name} must be H x W x 3, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeMismatchError(f"{name} must have positive height and width")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    return img


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def _checked_inverse(matrix: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(matrix)):
        raise DegenerateHomographyError()
    det = np.linalg.det(matrix)
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise DegenerateHomographyError()
    return np.linalg.inv(matrix)


def invert_homography(h: Homography) -> Homography:
    return Homography.from_array(_checked_inverse(h.array))


def compose_homographies(g: Homography, h: Homography) -> Homography:
    """Return g∘h, the warp that applies h first and g second"""
    return Homography.from_array(g.array @ h.array)


def apply_homography(h: Homography, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Map pixel coordinates through h with the projective division"""
    m = h.array
    w = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    px = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / w
    py = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / w
    return px, py


def warp_image(img: LinearImage, h: Homography) -> LinearImage:
    """
    Inverse-warp an image: output[n] = img[h^-1(n)].

    Bilinear sampling; samples that fall outside the image replicate the edge.

    Args:
        img: H x W x 3 raster
        h: Homography mapping source pixels to output pixels

    Returns:
        The warped raster with the same shape and dtype
    """
    img = check_image(img)
    inverse = _checked_inverse(h.array)
    if h.is_identity:
        return img.copy()

    height, width = img.shape[:2]
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    src_x, src_y = apply_homography(Homography.from_array(inverse), xs, ys)
    coords = np.stack([src_y, src_x])

    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.map_coordinates(img[..., c], coords, order=1, mode="nearest")
    return out


def mean_displacement(h: Homography, height: int, width: int) -> float:
    """Mean Manhattan distance ||h(n) - n||_1 over all pixels of an H x W image"""
    if height <= 0 or width <= 0:
        raise ValueError("height and width must be positive")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    px, py = apply_homography(h, xs, ys)
    return float(np.mean(np.abs(px - xs) + np.abs(py - ys)))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def srgb_gamma(v: np.ndarray) -> np.ndarray:
    """Standard sRGB transfer function on values already clipped to [0, 1]"""
    high = (1.0 + SRGB_A) * np.power(np.maximum(v, SRGB_THRESHOLD), SRGB_GAMMA) - SRGB_A
    return np.where(v <= SRGB_THRESHOLD, SRGB_SLOPE * v, high)


def render_srgb(img: LinearImage, rp: RenderParams) -> LinearImage:
    """Render linear camera RGB to display space: gamma(clip(gain * C @ x, 0, 1))"""
    img = check_image(img)
    v = rp.gain * np.einsum("ij,hwj->hwi", rp.matrix, img)
    v = np.clip(v, 0.0, 1.0)
    if rp.gamma == Gamma.SRGB:
        v = srgb_gamma(v)
    return v


def render_srgb_torch(
    x: torch.Tensor,
    gain: torch.Tensor,
    color_matrix: torch.Tensor,
    gamma: Gamma = Gamma.SRGB,
) -> torch.Tensor:
    """
    Differentiable twin of render_srgb for batches.

    Args:
        x: B x 3 x H x W linear images
        gain: B gains
        color_matrix: B x 3 x 3 color matrices
        gamma: Gamma curve

    Returns:
        B x 3 x H x W rendered images in [0, 1]
    """
    v = torch.einsum("bij,bjhw->bihw", color_matrix.to(x.dtype), x)
    v = gain.to(x.dtype).view(-1, 1, 1, 1) * v
    v = v.clamp(0.0, 1.0)
    if gamma == Gamma.SRGB:
        # Clamp inside the power so its gradient stays finite at zero
        high = (1.0 + SRGB_A) * v.clamp(min=SRGB_THRESHOLD).pow(SRGB_GAMMA) - SRGB_A
        v = torch.where(v <= SRGB_THRESHOLD, SRGB_SLOPE * v, high)
    return v


# ---------------------------------------------------------------------------
# Metrics (inputs are rendered images in [0, 1])
# ---------------------------------------------------------------------------

def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB with peak 1.0; identical images give +inf"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Mean SSIM with an 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03),
    computed per channel and averaged.
    """
    a = check_image(a).astype(np.float64)
    b = check_image(b).astype(np.float64)
    check_same_shape(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ShapeMismatchError(
            f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}"
        )
    return float(
        structural_similarity(
            a,
            b,
            data_range=1.0,
            channel_axis=-1,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".json")


def save_image(
    path: Union[str, Path],
    img: LinearImage,
    bit_depth: int = 16,
    render: Optional[RenderParams] = None,
    noise: Optional[NoiseParams] = None,
    homography: Optional[Homography] = None,
) -> Path:
    """
    Save a linear image as PNG with a JSON sidecar.

    16-bit files store round(clip(x, 0, 1) * 65535); 8-bit files use 255.

    Returns:
        The path of the written PNG
    """
    img = check_image(img)
    if bit_depth == 16:
        data = np.round(np.clip(img, 0.0, 1.0) * PNG_SCALE_16).astype(np.uint16)
    elif bit_depth == 8:
        data = np.round(np.clip(img, 0.0, 1.0) * PNG_SCALE_8).astype(np.uint8)
    else:
        raise ValueError(f"Unsupported bit depth: {bit_depth}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # OpenCV stores channels as BGR
    if not cv2.imwrite(str(path), np.ascontiguousarray(data[..., ::-1])):
        raise OSError(f"Failed to write image {path}")

    render = render or RenderParams()
    sidecar = ImageSidecar(
        gain=render.gain,
        color_matrix=render.matrix.reshape(-1).tolist(),
        gamma=render.gamma,
        sigma_r=noise.sigma_r if noise else 0.0,
        sigma_s=noise.sigma_s if noise else 0.0,
        homography=(homography or Homography.identity()).array.reshape(-1).tolist(),
    )
    sidecar_path(path).write_text(sidecar.model_dump_json(indent=2))
    return path


def load_image(path: Union[str, Path]) -> Tuple[LinearImage, ImageSidecar]:
    """
    Load a PNG written by save_image (or any 8/16-bit RGB PNG).

    Returns:
        A tuple of (float64 H x W x 3 image in [0, 1], sidecar). A missing
        sidecar yields defaults (gain 1, identity matrix, srgb).
    """
    path = Path(path)
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise FileNotFoundError(f"Could not read image {path}")
    if data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=2)
    data = data[..., :3][..., ::-1]

    if data.dtype == np.uint16:
        img = data.astype(np.float64) / PNG_SCALE_16
    elif data.dtype == np.uint8:
        img = data.astype(np.float64) / PNG_SCALE_8
    else:
        raise ValueError(f"Unsupported PNG dtype {data.dtype} in {path}")

    meta_path = sidecar_path(path)
    if meta_path.exists():
        sidecar = ImageSidecar(**json.loads(meta_path.read_text()))
    else:
        logger.warning(f"No sidecar found for {path}, using default render parameters")
        sidecar = ImageSidecar()
    return np.ascontiguousarray(img), sidecar


def save_triptych(path: Union[str, Path], panels: Sequence[np.ndarray], gap: int = 4) -> Path:
    """Write rendered [0, 1] panels side by side as an 8-bit PNG"""
    panels = [check_image(p) for p in panels]
    height = max(p.shape[0] for p in panels)
    spacer = np.ones((height, gap, 3))
    row = []
    for i, panel in enumerate(panels):
        if panel.shape[0] < height:
            panel = np.pad(panel, ((0, height - panel.shape[0]), (0, 0), (0, 0)), constant_values=1.0)
        row.append(panel)
        if i < len(panels) - 1:
            row.append(spacer)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.round(np.clip(np.concatenate(row, axis=1), 0.0, 1.0) * PNG_SCALE_8).astype(np.uint8)
    if not cv2.imwrite(str(path), np.ascontiguousarray(data[..., ::-1])):
        raise OSError(f"Failed to write image {path}")
    return path
