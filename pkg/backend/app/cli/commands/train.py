import argparse
import logging
from pathlib import Path

import torch

from app.cli.common import add_config_args, add_device_arg, add_network_args, network_overrides, require_checkpoint, resolve
from app.core.exceptions import EXIT_OK, ConfigError
from app.services.manifest_service import RunRecorder
from app.services.network_service import create_model
from app.services.training_service import make_datasets, train
from app.storage.checkpoint import read_checkpoint_config

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train a network on simulated pairs")
    add_config_args(parser)
    add_network_args(parser)
    add_device_arg(parser)
    parser.add_argument("--data", help="Sample cache directory (samples written by simulate are reused)")
    parser.add_argument("--out", required=True, help="Output directory for checkpoints and the training log")
    parser.add_argument("--max-steps", type=int, help="Override training.max_steps")
    parser.add_argument("--eta", type=float, help="Override the gradient-loss weight")
    parser.add_argument("--single-sample", action="store_true", help="Overfit a single fixed sample")
    parser.add_argument("--resume", help="Checkpoint directory to resume from")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    overrides = {
        "network": network_overrides(args),
        "simulation": {"reference": args.reference},
        "training": {
            "max_steps": args.max_steps,
            "eta": args.eta,
            "seed": args.seed,
            "single_sample": True if args.single_sample else None,
        },
    }
    if args.resume:
        resume_dir = require_checkpoint(args.resume)
        # The checkpoint's architecture wins over presets and flags
        network, saved_training, _ = read_checkpoint_config(resume_dir)
        if args.reference and args.reference != network.reference.value:
            raise ConfigError(f"--reference {args.reference} conflicts with checkpoint reference {network.reference.value}")
        overrides["network"] = network.model_dump(mode="json")
        overrides["simulation"]["reference"] = network.reference.value
        if saved_training is not None:
            flags = {key: value for key, value in overrides["training"].items() if value is not None}
            overrides["training"] = {**saved_training.model_dump(mode="json"), **flags}
    if args.data and not Path(args.data).is_dir():
        raise ConfigError(f"data directory not found: {args.data}")

    config, _ = resolve(args, overrides)
    seed = config.training.seed
    inputs = [p for p in (args.config, args.data, args.resume) if p]
    with RunRecorder("train", args.out, config.model_dump(mode="json"), seed, inputs):
        model = create_model(config.network, seed=seed, device=torch.device(args.device))
        train_data, val_data = make_datasets(config.simulation, config.training, model, cache_dir=args.data)
        result = train(model, train_data, val_data, config.training, output_dir=args.out, resume_from=args.resume)
        logger.info(f"Training finished at step {result.state.step}; final checkpoint in {result.checkpoint_dir}")
    return EXIT_OK
