"""
Prediction network: a shared convolutional encoder feeding a global basis
decoder and a per-pixel decoder.

Widths are given relative to ``base_channels`` (c): the encoder runs at
c, c, 2c, 4c, 8c and 16c channels over five 2x2 max-pool levels.
"""
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from app.schemas.network import NetworkConfig, Variant

DOWNSAMPLE = 32


def conv3x3(in_channels: int, out_channels: int) -> nn.Conv2d:
    return nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)


class ConvStack(nn.Sequential):
    """3x3 convolutions, each followed by a ReLU"""

    def __init__(self, channels: List[int]):
        layers = []
        for in_channels, out_channels in zip(channels[:-1], channels[1:]):
            layers += [conv3x3(in_channels, out_channels), nn.ReLU(inplace=True)]
        super().__init__(*layers)


class UpStage(nn.Module):
    """Bilinear upsampling, a conv, concatenation with a skip feature and two more convs"""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int):
        super().__init__()
        self.up_conv = ConvStack([in_channels, out_channels])
        self.merge = ConvStack([out_channels + skip_channels, out_channels, out_channels])

    def forward(self, x: torch.Tensor, skip: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
        x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        x = self.up_conv(x)
        if skip.shape[-2:] != x.shape[-2:]:
            skip = skip.expand(-1, -1, *x.shape[-2:])
        return self.merge(torch.cat([x, skip], dim=1))


class Encoder(nn.Module):
    def __init__(self, in_channels: int, c: int):
        super().__init__()
        self.widths = [c, 2 * c, 4 * c, 8 * c, 16 * c]
        self.stem = ConvStack([in_channels, c])
        levels = []
        previous = c
        for width in self.widths:
            levels.append(ConvStack([previous, width, width]))
            previous = width
        self.levels = nn.ModuleList(levels)
        self.bottleneck = ConvStack([previous, previous, previous])

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """Returns the bottleneck feature and the pre-pool feature of every level"""
        x = self.stem(x)
        skips = []
        for level in self.levels:
            x = level(x)
            skips.append(x)
            x = F.max_pool2d(x, kernel_size=2, stride=2)
        return self.bottleneck(x), skips


def global_stage_sizes(K: int) -> List[int]:
    """Spatial sizes of the four global-decoder stages; the last one is K+1"""
    sizes = [min(2 ** i, K + 1) for i in range(1, 4)]
    return sizes + [K + 1]


class GlobalDecoder(nn.Module):
    """
    Decodes the basis from globally pooled features.

    Starts at 1x1, skips are encoder features pooled globally and replicated
    over the stage resolution. A 2x2 valid conv takes the last (K+1)^2 stage
    to K x K.
    """

    def __init__(self, c: int, K: int, out_channels: int):
        super().__init__()
        self.sizes = global_stage_sizes(K)
        widths = [8 * c, 4 * c, 4 * c, 2 * c]
        skip_widths = [16 * c, 8 * c, 4 * c, 2 * c]
        stages = []
        previous = 16 * c
        for width, skip_width in zip(widths, skip_widths):
            stages.append(UpStage(previous, skip_width, width))
            previous = width
        self.stages = nn.ModuleList(stages)
        self.valid = nn.Sequential(nn.Conv2d(previous, previous, kernel_size=2), nn.ReLU(inplace=True))
        self.refine = ConvStack([previous, previous])
        self.head = conv3x3(previous, out_channels)

    def forward(self, bottleneck: torch.Tensor, skips: List[torch.Tensor]) -> torch.Tensor:
        x = F.adaptive_avg_pool2d(bottleneck, 1)
        # Skips from the deepest level upwards, excluding the full-resolution level
        for stage, size, skip in zip(self.stages, self.sizes, reversed(skips[1:])):
            pooled = F.adaptive_avg_pool2d(skip, 1)
            x = stage(x, pooled, (size, size))
        return self.head(self.refine(self.valid(x)))


class PixelDecoder(nn.Module):
    """Skip-connected upsampling path back to full resolution"""

    def __init__(self, c: int, out_channels: int):
        super().__init__()
        widths = [8 * c, 4 * c, 2 * c, c, c]
        skip_widths = [16 * c, 8 * c, 4 * c, 2 * c, c]
        stages = []
        previous = 16 * c
        for width, skip_width in zip(widths, skip_widths):
            stages.append(UpStage(previous, skip_width, width))
            previous = width
        self.stages = nn.ModuleList(stages)
        self.refine = ConvStack([previous, c, c])
        self.head = conv3x3(c, out_channels)

    def forward(self, bottleneck: torch.Tensor, skips: List[torch.Tensor]) -> torch.Tensor:
        x = bottleneck
        for stage, skip in zip(self.stages, reversed(skips)):
            x = stage(x, skip, skip.shape[-2:])
        return self.head(self.refine(x))


class FlashDenoiseNet(nn.Module):
    """
    Encoder with a per-pixel decoder and, for basis variants, a global decoder.

    ``forward`` returns the raw heads: basis (B x 6J x K x K, or None) and the
    per-pixel output (B x pixel_head_channels x H x W).
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        c = config.base_channels
        self.encoder = Encoder(config.in_channels, c)
        self.global_decoder: Optional[GlobalDecoder] = None
        if config.uses_basis:
            self.global_decoder = GlobalDecoder(c, config.K, 6 * config.J)
        self.pixel_decoder = PixelDecoder(c, config.pixel_head_channels)

    def forward(self, x: torch.Tensor) -> Tuple[Optional[torch.Tensor], torch.Tensor]:
        height, width = x.shape[-2:]
        if height % DOWNSAMPLE or width % DOWNSAMPLE:
            raise ValueError(f"input dimensions must be divisible by {DOWNSAMPLE}, got {height}x{width}")
        bottleneck, skips = self.encoder(x)
        basis = None
        if self.global_decoder is not None:
            basis = self.global_decoder(bottleneck, skips)
        return basis, self.pixel_decoder(bottleneck, skips)

    def reset_parameters(self) -> None:
        """Fan-in uniform conv weights, zero biases, scale-map bias 1"""
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_uniform_(module.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(module.bias)
        if self.config.variant == Variant.OURS:
            with torch.no_grad():
                self.pixel_decoder.head.bias[self.config.J:] = 1.0
