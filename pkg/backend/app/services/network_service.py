import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from app.models.network import DOWNSAMPLE, FlashDenoiseNet
from app.schemas.network import NetworkConfig, Variant
from app.services.imaging_service import LinearImage
from app.services.kernel_service import (
    KernelBasis,
    PredictionFields,
    apply_scale_map,
    filter_direct,
    filter_fast,
)
from app.services.simulation_service import SamplePair

logger = logging.getLogger(__name__)

# Channel layout of the network input
INPUT_CHANNELS = {
    "pair": ["x_nf", "x_f", "noise_map_nf", "noise_map_f"],
    "single": ["x_nf", "noise_map_nf"],
}


# ---------------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------------

def initialize(model: FlashDenoiseNet, seed: int) -> FlashDenoiseNet:
    """Re-initialize all parameters deterministically from seed"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model.reset_parameters()
    return model


def create_model(config: NetworkConfig, seed: int = 0, device: Union[str, torch.device] = "cpu") -> FlashDenoiseNet:
    model = initialize(FlashDenoiseNet(config), seed)
    logger.info(
        f"Created {config.variant.value} network with {count_parameters(model):,} parameters "
        f"(J={config.J}, K={config.K}, d={config.d}, c={config.base_channels})"
    )
    return model.to(device)


def count_parameters(model_or_config: Union[FlashDenoiseNet, NetworkConfig]) -> int:
    """Number of trainable parameters; depends only on the configuration"""
    model = model_or_config
    if isinstance(model_or_config, NetworkConfig):
        model = FlashDenoiseNet(model_or_config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def model_device(model: torch.nn.Module) -> torch.device:
    return next(model.parameters()).device


# ---------------------------------------------------------------------------
# Input assembly
# ---------------------------------------------------------------------------

def build_input(sample: SamplePair, variant: Variant = Variant.OURS) -> np.ndarray:
    """
    Stack the observed images and their noise maps into the network input.

    Channel order is [x_nf, x_f, noise_map_nf, noise_map_f] (RGB each, 12
    channels); the single-image variant uses [x_nf, noise_map_nf].
    """
    layout = INPUT_CHANNELS["single" if variant == Variant.SINGLE_IMAGE else "pair"]
    return np.concatenate([getattr(sample, name) for name in layout], axis=-1)


def to_tensor(img: np.ndarray, device: Union[str, torch.device] = "cpu", dtype=torch.float32) -> torch.Tensor:
    """H x W x C array to a 1 x C x H x W tensor"""
    return torch.as_tensor(np.ascontiguousarray(img.transpose(2, 0, 1)), dtype=dtype, device=device).unsqueeze(0)


def to_image(t: torch.Tensor) -> LinearImage:
    """1 x 3 x H x W (or 3 x H x W) tensor to an H x W x 3 float64 array"""
    if t.dim() == 4:
        t = t[0]
    return t.detach().cpu().double().numpy().transpose(1, 2, 0)


def batch_inputs(
    samples: Sequence[SamplePair],
    variant: Variant = Variant.OURS,
    device: Union[str, torch.device] = "cpu",
    dtype=torch.float32,
) -> torch.Tensor:
    """B x C x H x W network input for a list of equally sized samples"""
    arrays = [build_input(sample, variant).transpose(2, 0, 1) for sample in samples]
    return torch.as_tensor(np.ascontiguousarray(np.stack(arrays)), dtype=dtype, device=device)


def check_input_size(height: int, width: int) -> None:
    if height % DOWNSAMPLE or width % DOWNSAMPLE:
        raise ValueError(f"image dimensions must be divisible by {DOWNSAMPLE}, got {height}x{width}")


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def split_basis(raw: torch.Tensor, config: NetworkConfig) -> KernelBasis:
    """B x 6J x K x K head output to a KernelBasis; the first 3J channels are A"""
    batch = raw.shape[0]
    pairs = raw.view(batch, 2, config.J, 3, config.K, config.K)
    return KernelBasis(a=pairs[:, 0], b=pairs[:, 1], d=config.d, use_b=config.use_b)


def forward(model: FlashDenoiseNet, inputs: torch.Tensor) -> Tuple[KernelBasis, PredictionFields]:
    """
    Run a basis variant and split its heads.

    Returns:
        The per-image kernel basis and the per-pixel fields. The single-image
        variant has no scale map (``scale_map`` is None).
    """
    config = model.config
    if not config.uses_basis:
        raise ValueError(f"variant {config.variant.value} does not predict a kernel basis")
    raw_basis, pixel = model(inputs)
    basis = split_basis(raw_basis, config)
    coeffs = pixel[:, : config.J]
    scale_map = pixel[:, config.J:] if config.variant == Variant.OURS else None
    return basis, PredictionFields(coeffs=coeffs, scale_map=scale_map)


def apply_kpn(x_nf: torch.Tensor, x_f: torch.Tensor, raw: torch.Tensor, kernel_size: int) -> torch.Tensor:
    """
    Filter both images with per-pixel, per-channel kernels and sum the results.

    ``raw`` holds 2 x 3 x k*k channels: no-flash kernels first, row-major taps.
    Kernels are used as predicted, without normalization.
    """
    batch, _, height, width = x_nf.shape
    taps = kernel_size * kernel_size
    kernels = raw.view(batch, 2, 3, taps, height, width)
    out = torch.zeros_like(x_nf)
    for index, image in enumerate((x_nf, x_f)):
        patches = F.unfold(image, kernel_size, padding=kernel_size // 2)
        patches = patches.view(batch, 3, taps, height, width)
        out = out + (patches * kernels[:, index]).sum(dim=2)
    return out


def predict(model: FlashDenoiseNet, inputs: torch.Tensor, fast: bool = True) -> torch.Tensor:
    """Denoised linear image (B x 3 x H x W) for any variant, differentiable"""
    config = model.config
    x_nf = inputs[:, 0:3]
    if config.uses_basis:
        basis, fields = forward(model, inputs)
        filtered = (filter_fast if fast else filter_direct)(x_nf, basis, fields.coeffs)
        if fields.scale_map is None:
            return filtered
        return apply_scale_map(filtered, fields.scale_map)
    _, pixel = model(inputs)
    if config.variant == Variant.DIRECT_PREDICTION:
        return x_nf + pixel
    return apply_kpn(x_nf, inputs[:, 3:6], pixel, config.kpn_kernel_size)


def _predict_sample(model: FlashDenoiseNet, sample: SamplePair, fast: bool) -> LinearImage:
    check_input_size(*sample.shape)
    inputs = batch_inputs([sample], model.config.variant, device=model_device(model))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = predict(model, inputs, fast=fast)
    finally:
        model.train(was_training)
    return to_image(out)


def denoise(model: FlashDenoiseNet, sample: SamplePair, fast: bool = True) -> LinearImage:
    """Filtered and scaled estimate of the ambient image for the full model"""
    if model.config.variant != Variant.OURS:
        raise ValueError(f"denoise expects variant 'ours', got {model.config.variant.value}")
    return _predict_sample(model, sample, fast)


def denoise_with_intermediates(
    model: FlashDenoiseNet, sample: SamplePair, fast: bool = True
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Full-model output together with the filtered image F and the scale map G.

    Returns:
        (F * G, F, G) as 1 x 3 x H x W CPU tensors in the model dtype
    """
    if model.config.variant != Variant.OURS:
        raise ValueError(f"denoise expects variant 'ours', got {model.config.variant.value}")
    check_input_size(*sample.shape)
    inputs = batch_inputs([sample], model.config.variant, device=model_device(model))
    model.eval()
    with torch.no_grad():
        basis, fields = forward(model, inputs)
        filtered = (filter_fast if fast else filter_direct)(inputs[:, 0:3], basis, fields.coeffs)
        out = apply_scale_map(filtered, fields.scale_map)
    return out.cpu(), filtered.cpu(), fields.scale_map.cpu()


def forward_baseline(model: FlashDenoiseNet, sample: SamplePair) -> LinearImage:
    """Output of a baseline variant (single_image, direct_prediction or kpn)"""
    if model.config.variant == Variant.OURS:
        raise ValueError("forward_baseline expects a baseline variant, got 'ours'")
    return _predict_sample(model, sample, fast=True)


def run_model(model: FlashDenoiseNet, sample: SamplePair) -> LinearImage:
    """Dispatch to denoise or forward_baseline by variant"""
    if model.config.variant == Variant.OURS:
        return denoise(model, sample)
    return forward_baseline(model, sample)


def predict_fields(
    model: FlashDenoiseNet, sample: SamplePair
) -> Tuple[KernelBasis, PredictionFields]:
    """Basis and per-pixel fields for one sample, detached on the CPU"""
    check_input_size(*sample.shape)
    inputs = batch_inputs([sample], model.config.variant, device=model_device(model))
    model.eval()
    with torch.no_grad():
        basis, fields = forward(model, inputs)
    basis = KernelBasis(a=basis.a.cpu(), b=basis.b.cpu(), d=basis.d, use_b=basis.use_b)
    scale_map: Optional[torch.Tensor] = None
    if fields.scale_map is not None:
        scale_map = fields.scale_map.cpu()
    return basis, PredictionFields(coeffs=fields.coeffs.cpu(), scale_map=scale_map)
