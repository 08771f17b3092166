import argparse
import logging
from pathlib import Path

from app.cli.common import add_config_args, resolve
from app.core.exceptions import EXIT_OK
from app.services.imaging_service import save_image
from app.services.manifest_service import RunRecorder
from app.services.simulation_service import sample_training_sample
from app.storage.dataset import sample_filename, save_sample

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="Generate simulated flash/no-flash samples")
    add_config_args(parser)
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--n", type=int, default=10, help="Number of samples")
    parser.add_argument("--reference", choices=["noflash", "flash"], help="Geometric reference frame")
    parser.add_argument("--png", action="store_true", help="Also write 16-bit PNGs with sidecars")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    """Write samples 0..n-1 of the (config, seed) stream as <out>/<seed>/sample_<index>.fnfc"""
    if args.n < 0:
        raise ValueError("--n must be >= 0")
    config, seed = resolve(args, {"simulation": {"reference": args.reference}})
    out_dir = Path(args.out)
    effective = config.model_dump(mode="json")
    with RunRecorder("simulate", out_dir, effective, seed, [args.config] if args.config else []):
        sample_dir = out_dir / f"{seed}"
        for index in range(args.n):
            sample = sample_training_sample(config.simulation, seed, index)
            save_sample(sample_dir / sample_filename(index), sample, config.simulation)
            if args.png:
                stem = sample_dir / f"sample_{index:08d}"
                save_image(f"{stem}_noflash.png", sample.x_nf, render=sample.render, noise=sample.noise)
                save_image(f"{stem}_flash.png", sample.x_f, render=sample.render, noise=sample.noise, homography=sample.homography)
                save_image(f"{stem}_gt.png", sample.y, render=sample.render)
        logger.info(f"Wrote {args.n} samples to {sample_dir}")
    return EXIT_OK
