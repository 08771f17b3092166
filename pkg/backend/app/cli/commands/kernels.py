import argparse
import logging
from pathlib import Path
from typing import List, Tuple

import cv2
import numpy as np
import torch

from app.cli.common import add_device_arg, require_checkpoint
from app.core.exceptions import EXIT_OK, ConfigError
from app.schemas.imaging import Gamma, RenderParams
from app.schemas.simulation import NoiseParams
from app.services.imaging_service import load_image, save_image
from app.services.kernel_service import kernel_at_pixel
from app.services.manifest_service import RunRecorder
from app.services.network_service import predict_fields
from app.services.simulation_service import SamplePair, observed_pair
from app.storage.checkpoint import load_checkpoint
from app.storage.container import dump_kernel_field
from app.storage.dataset import load_sample

logger = logging.getLogger(__name__)

KERNEL_FIELD_FILE = "kernel_field.fnkf"
# Nearest-neighbour magnification of the kernel images
ZOOM = 8


def parse_pixel(text: str) -> Tuple[int, int]:
    try:
        row, col = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"pixel must be ROW,COL, got {text!r}")
    return row, col


def register(subparsers) -> None:
    parser = subparsers.add_parser("kernels", help="Export predicted per-pixel kernels and the kernel field")
    add_device_arg(parser)
    parser.add_argument("--weights", required=True, help="Checkpoint directory of a basis variant")
    parser.add_argument("--sample", help="Stored .fnfc sample")
    parser.add_argument("--flash", help="Flash PNG (with --noflash)")
    parser.add_argument("--noflash", help="No-flash PNG (with --flash)")
    parser.add_argument("--sigma-r", type=float, help="Read noise stddev for PNG inputs")
    parser.add_argument("--sigma-s", type=float, default=0.0, help="Shot noise stddev for PNG inputs")
    parser.add_argument("--pixels", nargs="*", type=parse_pixel, default=[], help="Pixels as ROW,COL")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.set_defaults(handler=run)


def kernel_image(kernel: np.ndarray) -> np.ndarray:
    """3 x E x E kernel to an E x E x 3 image in [0, 1], zero mapped to 0.5"""
    scale = float(np.max(np.abs(kernel))) or 1.0
    img = 0.5 + 0.5 * kernel.transpose(1, 2, 0) / scale
    return cv2.resize(img, None, fx=ZOOM, fy=ZOOM, interpolation=cv2.INTER_NEAREST)


def _inputs(args: argparse.Namespace) -> Tuple[SamplePair, List[str]]:
    if args.sample:
        return load_sample(args.sample), [args.sample]
    if not (args.flash and args.noflash):
        raise ConfigError("pass --sample or both --flash and --noflash")
    x_nf, sidecar = load_image(args.noflash)
    x_f, _ = load_image(args.flash)
    sigma_r = args.sigma_r if args.sigma_r is not None else sidecar.sigma_r
    if sigma_r <= 0:
        raise ConfigError("sigma_r must be positive (pass --sigma-r or provide a sidecar)")
    noise = NoiseParams(sigma_r=sigma_r, sigma_s=args.sigma_s)
    return observed_pair(x_nf, x_f, noise, sidecar.render_params), [args.flash, args.noflash]


def run(args: argparse.Namespace) -> int:
    weights = require_checkpoint(args.weights)
    out_dir = Path(args.out)
    sample, inputs = _inputs(args)
    height, width = sample.shape
    for row, col in args.pixels:
        if not (0 <= row < height and 0 <= col < width):
            raise ConfigError(f"pixel {row},{col} is outside the {height}x{width} image")

    config = {"weights": str(weights), "pixels": [list(p) for p in args.pixels]}
    with RunRecorder("kernels", out_dir, config, 0, [weights, *inputs]):
        model, _, _ = load_checkpoint(weights, torch.device(args.device))
        if not model.config.uses_basis:
            raise ConfigError(f"variant {model.config.variant.value} does not predict kernels")
        basis, fields = predict_fields(model, sample)
        dump_kernel_field(
            out_dir / KERNEL_FIELD_FILE,
            basis.a[0].numpy(),
            basis.b[0].numpy(),
            fields.coeffs[0].numpy(),
            basis.d,
        )
        display = RenderParams(gamma=Gamma.LINEAR)
        for row, col in args.pixels:
            kernel = kernel_at_pixel(basis, fields.coeffs, row, col).double().numpy()
            save_image(out_dir / f"kernel_r{row}_c{col}.png", kernel_image(kernel), bit_depth=8, render=display)
        logger.info(f"Exported kernels at {len(args.pixels)} pixels to {out_dir}")
    return EXIT_OK
