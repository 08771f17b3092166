"""
Per-pixel kernel reconstruction and filtering.

Every filter here is a cross-correlation with zero padding and "same" output
size. Tensors are channels-first: images B x 3 x H x W, coefficients B x J x H x W,
bases B x J x 3 x K x K.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from app.core.exceptions import ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass
class KernelBasis:
    """J pairs of K x K x 3 kernels (A_j fine term, B_j coarse term) per image"""
    a: torch.Tensor
    b: torch.Tensor
    d: int
    use_b: bool = True

    def __post_init__(self):
        if self.a.dim() == 4:
            self.a = self.a.unsqueeze(0)
        if self.b.dim() == 4:
            self.b = self.b.unsqueeze(0)
        if self.a.shape != self.b.shape or self.a.dim() != 5 or self.a.shape[2] != 3:
            raise ShapeMismatchError(f"basis tensors must be B x J x 3 x K x K, got {tuple(self.a.shape)}")
        if self.a.shape[-1] != self.a.shape[-2] or self.a.shape[-1] % 2 == 0:
            raise ShapeMismatchError("basis kernels must be square with odd size")
        if self.d < 1:
            raise ValueError("upsampling factor d must be >= 1")

    @property
    def J(self) -> int:
        return self.a.shape[1]

    @property
    def K(self) -> int:
        return self.a.shape[-1]

    @property
    def footprint(self) -> int:
        return (self.K - 1) * self.d + 1

    @property
    def batch_size(self) -> int:
        return self.a.shape[0]


@dataclass
class PredictionFields:
    """Per-pixel mixing coefficients and the 3-channel multiplicative scale map"""
    coeffs: torch.Tensor
    scale_map: Optional[torch.Tensor] = None


# ---------------------------------------------------------------------------
# Kernel reconstruction
# ---------------------------------------------------------------------------

def interpolation_matrix(K: int, d: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """E x K matrix of align-corners linear interpolation weights, E = (K-1)d+1"""
    E = (K - 1) * d + 1
    u = torch.arange(E, dtype=dtype, device=device).unsqueeze(1)
    q = torch.arange(K, dtype=dtype, device=device).unsqueeze(0)
    return ((d - (u - d * q).abs()) / d).clamp(min=0.0)


def upsample_kernel(b: torch.Tensor, d: int) -> torch.Tensor:
    """
    Bilinearly upsample kernels by d with align-corners semantics.

    Original taps land on stride-d positions unchanged and the corner taps map
    to the corners, so a K x K kernel becomes (K-1)d+1 square.

    Args:
        b: Kernels with the two trailing dimensions K x K
        d: Upsampling factor

    Returns:
        Kernels with trailing dimensions E x E
    """
    if d < 1:
        raise ValueError("upsampling factor d must be >= 1")
    K = b.shape[-1]
    if b.shape[-2] != K or K % 2 == 0:
        raise ShapeMismatchError("kernels must be square with odd size")
    if d == 1:
        return b
    m = interpolation_matrix(K, d, dtype=b.dtype, device=b.device)
    return m @ b @ m.transpose(0, 1)


def effective_kernels(basis: KernelBasis) -> torch.Tensor:
    """All reconstructed kernels A_j + B_j↑d, shape B x J x 3 x E x E"""
    pad = (basis.footprint - basis.K) // 2
    kernels = F.pad(basis.a, (pad, pad, pad, pad))
    if basis.use_b:
        kernels = kernels + upsample_kernel(basis.b, basis.d)
    return kernels


def effective_kernel(basis: KernelBasis, j: int) -> torch.Tensor:
    """Reconstructed kernel j of every image in the batch, shape B x 3 x E x E"""
    return effective_kernels(basis)[:, j]


def kernel_at_pixel(basis: KernelBasis, coeffs: torch.Tensor, row: int, col: int, index: int = 0) -> torch.Tensor:
    """The per-pixel kernel sum_j c_j[n] (A_j + B_j↑d) at one pixel, shape 3 x E x E"""
    kernels = effective_kernels(basis)[index]
    return torch.einsum("j,jcuv->cuv", coeffs[index, :, row, col], kernels)


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

def _check_inputs(x: torch.Tensor, basis: KernelBasis, coeffs: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeMismatchError(f"image must be B x 3 x H x W, got {tuple(x.shape)}")
    if coeffs.dim() != 4 or coeffs.shape[0] != x.shape[0] or coeffs.shape[-2:] != x.shape[-2:]:
        raise ShapeMismatchError(
            f"coefficients {tuple(coeffs.shape)} do not match image {tuple(x.shape)}"
        )
    if coeffs.shape[1] != basis.J:
        raise ShapeMismatchError(f"coefficients have {coeffs.shape[1]} channels, basis has {basis.J}")
    if basis.batch_size != x.shape[0]:
        raise ShapeMismatchError("basis and image batch sizes differ")


def _correlate(
    x_padded: torch.Tensor,
    kernels: torch.Tensor,
    out_size: Tuple[int, int],
    offset: Tuple[int, int] = (0, 0),
    dilation: int = 1,
) -> torch.Tensor:
    """
    Per-image, per-channel correlation of a padded image with J kernels.

    Args:
        x_padded: B x 3 x Hp x Wp image, already zero padded
        kernels: B x J x 3 x kh x kw
        out_size: (H, W) of the output
        offset: top-left position in x_padded of the first kernel tap for output (0, 0)
        dilation: tap spacing

    Returns:
        B x 3 x J x H x W responses
    """
    batch, J, channels, kh, kw = kernels.shape
    height, width = out_size
    top, left = offset
    window = x_padded[
        :, :, top: top + height + dilation * (kh - 1), left: left + width + dilation * (kw - 1)
    ]
    weight = kernels.permute(0, 2, 1, 3, 4).reshape(batch * channels * J, 1, kh, kw)
    out = F.conv2d(
        window.reshape(1, batch * channels, window.shape[-2], window.shape[-1]),
        weight,
        dilation=dilation,
        groups=batch * channels,
    )
    return out.view(batch, channels, J, height, width)


def _mix(responses: torch.Tensor, coeffs: torch.Tensor) -> torch.Tensor:
    return torch.einsum("bcjhw,bjhw->bchw", responses, coeffs)


def filter_direct(x_nf: torch.Tensor, basis: KernelBasis, coeffs: torch.Tensor) -> torch.Tensor:
    """
    Reference filtering: F[n] = sum_j c_j[n] (x_nf * (A_j + B_j↑d))[n].

    Convolves with the full E x E reconstructed kernels; used as the oracle for
    filter_fast and for small-kernel configurations.
    """
    _check_inputs(x_nf, basis, coeffs)
    kernels = effective_kernels(basis)
    radius = (basis.footprint - 1) // 2
    padded = F.pad(x_nf, (radius, radius, radius, radius))
    responses = _correlate(padded, kernels, x_nf.shape[-2:])
    return _mix(responses, coeffs)


@lru_cache(maxsize=None)
def _tent_taps(d: int, low: int, high: int) -> Tuple[float, ...]:
    """1-D tent (d - |s|)/d restricted to s in [low, high], as 2d-1 taps"""
    return tuple((d - abs(s)) / d if low <= s <= high else 0.0 for s in range(-(d - 1), d))


def _tap_classes(K: int, d: int) -> List[Tuple[int, int, Tuple[int, int]]]:
    """
    Split the K tap positions of one axis by the tent support they may use.

    The outermost taps of B_j↑d are cut off at the footprint edge, so they
    only see the inner half of the tent.
    """
    if K == 1:
        return [(0, 1, (0, 0))]
    classes = [(0, 1, (0, d - 1))]
    if K > 2:
        classes.append((1, K - 1, (-(d - 1), d - 1)))
    classes.append((K - 1, K, (-(d - 1), 0)))
    return classes


def _tent_prefilter(x: torch.Tensor, taps: Tuple[float, ...], axis: int) -> torch.Tensor:
    """Valid correlation of every channel with a 1-D tent along one spatial axis"""
    batch, channels, height, width = x.shape
    weight = torch.tensor(taps, dtype=x.dtype, device=x.device)
    weight = weight.view(1, 1, -1, 1) if axis == 0 else weight.view(1, 1, 1, -1)
    out = F.conv2d(x.reshape(batch * channels, 1, height, width), weight)
    return out.view(batch, channels, out.shape[-2], out.shape[-1])


def filter_fast(x_nf: torch.Tensor, basis: KernelBasis, coeffs: torch.Tensor) -> torch.Tensor:
    """
    Efficient filtering: F[n] = sum_j c_j[n] ((x * A_j)[n] + (x^h *_d B_j)[n]).

    x^h is x prefiltered with the separable (2d-1) tent and *_d a d-dilated
    K x K correlation. Taps on the outer ring of B_j use one-sided tents so the
    result matches filter_direct exactly, including at image borders.
    """
    _check_inputs(x_nf, basis, coeffs)
    if basis.d == 1:
        return filter_direct(x_nf, basis, coeffs)

    K, d = basis.K, basis.d
    size = x_nf.shape[-2:]
    radius = (K - 1) // 2
    responses = _correlate(F.pad(x_nf, (radius,) * 4), basis.a, size)

    if basis.use_b:
        coarse_radius = radius * d
        padded = F.pad(x_nf, (coarse_radius + d - 1,) * 4)
        classes = _tap_classes(K, d)
        vertical: Dict[Tuple[int, int], torch.Tensor] = {}
        for r0, r1, row_support in classes:
            if row_support not in vertical:
                vertical[row_support] = _tent_prefilter(padded, _tent_taps(d, *row_support), axis=0)
            for c0, c1, col_support in classes:
                prefiltered = _tent_prefilter(vertical[row_support], _tent_taps(d, *col_support), axis=1)
                block = basis.b[..., r0:r1, c0:c1]
                responses = responses + _correlate(
                    prefiltered, block, size, offset=(d * r0, d * c0), dilation=d
                )
    return _mix(responses, coeffs)


def apply_scale_map(f: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Elementwise product of the filtered image and the scale map"""
    if f.shape != g.shape:
        raise ShapeMismatchError(f"scale map {tuple(g.shape)} does not match image {tuple(f.shape)}")
    return f * g


def filter_image(
    x_nf: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    coeffs: np.ndarray,
    d: int,
    scale_map: Optional[np.ndarray] = None,
    use_b: bool = True,
    fast: bool = True,
) -> np.ndarray:
    """
    Filter one H x W x 3 image in float64.

    Args:
        x_nf: H x W x 3 image
        a, b: J x 3 x K x K basis kernels
        coeffs: H x W x J mixing coefficients
        d: Upsampling factor of the B kernels
        scale_map: Optional H x W x 3 multiplicative scale map
        use_b: Whether the B kernels contribute
        fast: Use the two-scale path instead of direct convolution

    Returns:
        The H x W x 3 filtered (and scaled) image
    """
    if x_nf.ndim != 3 or x_nf.shape[-1] != 3:
        raise ShapeMismatchError(f"expected an H x W x 3 image, got {x_nf.shape}")
    x = torch.from_numpy(np.ascontiguousarray(x_nf.transpose(2, 0, 1), dtype=np.float64)).unsqueeze(0)
    c = torch.from_numpy(np.ascontiguousarray(coeffs.transpose(2, 0, 1), dtype=np.float64)).unsqueeze(0)
    basis = KernelBasis(
        a=torch.as_tensor(a, dtype=torch.float64),
        b=torch.as_tensor(b, dtype=torch.float64),
        d=d,
        use_b=use_b,
    )
    with torch.no_grad():
        out = (filter_fast if fast else filter_direct)(x, basis, c)
        if scale_map is not None:
            g = torch.from_numpy(np.ascontiguousarray(scale_map.transpose(2, 0, 1), dtype=np.float64)).unsqueeze(0)
            out = apply_scale_map(out, g)
    return out[0].numpy().transpose(1, 2, 0)
