import argparse
import logging
from pathlib import Path

import numpy as np
import torch

from app.cli.common import add_device_arg, require_checkpoint
from app.core.exceptions import EXIT_OK, ConfigError
from app.schemas.imaging import Gamma, RenderParams
from app.schemas.network import Variant
from app.schemas.simulation import NoiseParams
from app.services.imaging_service import load_image, render_srgb, save_image
from app.services.manifest_service import RunRecorder
from app.services.network_service import denoise_with_intermediates, run_model, to_image
from app.services.simulation_service import observed_pair
from app.storage.checkpoint import load_checkpoint
from app.storage.container import write_container

logger = logging.getLogger(__name__)

# Sidecar render parameters of an image that is already in display space
DISPLAY = RenderParams(gamma=Gamma.LINEAR)


def register(subparsers) -> None:
    parser = subparsers.add_parser("denoise", help="Denoise one captured flash/no-flash pair")
    add_device_arg(parser)
    parser.add_argument("--weights", required=True, help="Checkpoint directory")
    parser.add_argument("--flash", required=True, help="Flash PNG (linear, with optional sidecar)")
    parser.add_argument("--noflash", required=True, help="No-flash PNG (linear, with optional sidecar)")
    parser.add_argument("--sigma-r", type=float, help="Read noise stddev (default: no-flash sidecar)")
    parser.add_argument("--sigma-s", type=float, help="Shot noise stddev (default: no-flash sidecar)")
    parser.add_argument("--out", required=True, help="Output PNG (rendered sRGB, 16-bit)")
    parser.add_argument("--dump-intermediates", action="store_true", help="Also write the filtered image F and scale map G")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    weights = require_checkpoint(args.weights)
    out_path = Path(args.out)
    x_nf, sidecar = load_image(args.noflash)
    x_f, _ = load_image(args.flash)
    sigma_r = args.sigma_r if args.sigma_r is not None else sidecar.sigma_r
    sigma_s = args.sigma_s if args.sigma_s is not None else sidecar.sigma_s
    if sigma_r <= 0:
        raise ConfigError("sigma_r must be positive (pass --sigma-r or provide a sidecar)")
    noise = NoiseParams(sigma_r=sigma_r, sigma_s=sigma_s)
    render = sidecar.render_params

    config = {"weights": str(weights), "sigma_r": sigma_r, "sigma_s": sigma_s, "render": render.model_dump(mode="json")}
    with RunRecorder("denoise", out_path.parent, config, 0, [weights, args.flash, args.noflash]):
        model, _, _ = load_checkpoint(weights, torch.device(args.device))
        sample = observed_pair(x_nf, x_f, noise, render, model.config.reference)
        if model.config.variant == Variant.OURS:
            out, filtered, scale_map = denoise_with_intermediates(model, sample)
            estimate = to_image(out)
        else:
            if args.dump_intermediates:
                raise ConfigError(f"variant {model.config.variant.value} has no scale map to dump")
            estimate = run_model(model, sample)

        save_image(out_path, render_srgb(estimate, render), render=DISPLAY, noise=noise)
        save_image(out_path.with_name(f"{out_path.stem}_linear.png"), estimate, render=render, noise=noise)
        if args.dump_intermediates:
            arrays = {
                "filtered": filtered[0].numpy().transpose(1, 2, 0),
                "scale_map": scale_map[0].numpy().transpose(1, 2, 0),
                "output": out[0].numpy().transpose(1, 2, 0),
            }
            write_container(
                out_path.with_name(f"{out_path.stem}_intermediates.fnfc"),
                {name: np.ascontiguousarray(array) for name, array in arrays.items()},
                {"render": render.model_dump(mode="json")},
            )
            save_image(out_path.with_name(f"{out_path.stem}_filtered.png"), render_srgb(to_image(filtered), render), render=DISPLAY)
        logger.info(f"Denoised output written to {out_path}")
    return EXIT_OK
