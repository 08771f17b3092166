"""Arguments and helpers shared by the subcommands"""
import argparse
from pathlib import Path
from typing import Any, Dict, List, Tuple

import torch

from app.core.config import settings
from app.core.exceptions import ConfigError
from app.models.network import FlashDenoiseNet
from app.schemas.network import Variant
from app.schemas.run import PRESETS, RunConfig
from app.schemas.simulation import Reference
from app.services.config_service import resolve_run_config
from app.storage.checkpoint import CONFIG_FILE, load_checkpoint


def add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file with simulation/network/training/evaluation sections")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="Built-in configuration preset")
    parser.add_argument("--seed", type=int, help=f"Master seed (default: config value or {settings.DEFAULT_SEED})")


def add_network_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--variant", choices=[v.value for v in Variant], help="Network variant")
    parser.add_argument("--reference", choices=[r.value for r in Reference], help="Geometric reference frame")
    parser.add_argument("--no-basis-b", action="store_true", help="Use only the fine A kernels")


def add_device_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--device", default=settings.DEVICE, help="Torch device")


def network_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "variant": getattr(args, "variant", None),
        "reference": getattr(args, "reference", None),
        "use_b": False if getattr(args, "no_basis_b", False) else None,
    }


def resolve(args: argparse.Namespace, overrides: Dict[str, Dict[str, Any]] = None) -> Tuple[RunConfig, int]:
    """Effective RunConfig and seed for a command"""
    overrides = overrides or {}
    config = resolve_run_config(getattr(args, "preset", None), getattr(args, "config", None), overrides)
    seed = args.seed if getattr(args, "seed", None) is not None else settings.DEFAULT_SEED
    return config, seed


def require_checkpoint(path: str) -> Path:
    """Existing checkpoint directory or ConfigError"""
    directory = Path(path)
    if not (directory / CONFIG_FILE).is_file():
        raise ConfigError(f"weights not found: {path}")
    return directory


def load_models(paths: List[str], device: str) -> List[Tuple[str, FlashDenoiseNet]]:
    """Load checkpoints given as PATH or NAME=PATH"""
    models = []
    for entry in paths:
        name, _, path = entry.rpartition("=")
        directory = require_checkpoint(path)
        model, _, _ = load_checkpoint(directory, torch.device(device))
        label = directory.resolve().parent.name if directory.name == "final" else directory.name
        models.append((name or f"{model.config.variant.value}:{label}", model))
    return models
