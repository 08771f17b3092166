"""
Checkpoint directories: ``config.json`` (network, training config and loop
state), ``weights.fnfc`` (float32 parameters keyed by layer path) and
``optimizer.pt`` (Adam state, present for resumable checkpoints).
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch

from app.core.exceptions import CheckpointError
from app.models.network import FlashDenoiseNet
from app.schemas.network import NetworkConfig
from app.schemas.training import TrainConfig, TrainState
from app.storage.container import read_container, write_container

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
WEIGHTS_FILE = "weights.fnfc"
OPTIMIZER_FILE = "optimizer.pt"


def save_weights(path: Union[str, Path], model: FlashDenoiseNet) -> Path:
    arrays = {
        name: tensor.detach().cpu().numpy().astype(np.float32)
        for name, tensor in model.state_dict().items()
    }
    return write_container(path, arrays, {"network": model.config.model_dump(mode="json")})


def load_weights(path: Union[str, Path], model: FlashDenoiseNet) -> FlashDenoiseNet:
    arrays, _ = read_container(path)
    expected = model.state_dict()
    missing = set(expected) - set(arrays)
    unexpected = set(arrays) - set(expected)
    if missing or unexpected:
        raise CheckpointError(
            f"{path}: parameters do not match the network (missing {sorted(missing)}, unexpected {sorted(unexpected)})"
        )
    state = {}
    for name, tensor in expected.items():
        if tuple(arrays[name].shape) != tuple(tensor.shape):
            raise CheckpointError(f"{path}: parameter {name} has shape {arrays[name].shape}, expected {tuple(tensor.shape)}")
        state[name] = torch.from_numpy(arrays[name]).to(dtype=tensor.dtype)
    model.load_state_dict(state)
    return model


def save_checkpoint(
    directory: Union[str, Path],
    model: FlashDenoiseNet,
    train_config: Optional[TrainConfig] = None,
    state: Optional[TrainState] = None,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> Path:
    """Write a checkpoint directory; existing files are replaced"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    document: Dict[str, Any] = {"network": model.config.model_dump(mode="json")}
    if train_config is not None:
        document["training"] = train_config.model_dump(mode="json")
    if state is not None:
        document["state"] = state.model_dump(mode="json")
    (directory / CONFIG_FILE).write_text(json.dumps(document, indent=2))
    save_weights(directory / WEIGHTS_FILE, model)
    if optimizer is not None:
        torch.save(optimizer.state_dict(), directory / OPTIMIZER_FILE)
    logger.info(f"Checkpoint written to {directory}")
    return directory


def read_checkpoint_config(directory: Union[str, Path]) -> Tuple[NetworkConfig, Optional[TrainConfig], Optional[TrainState]]:
    directory = Path(directory)
    config_path = directory / CONFIG_FILE
    if not config_path.is_file():
        raise CheckpointError(f"not a checkpoint directory (no {CONFIG_FILE}): {directory}")
    try:
        document = json.loads(config_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{config_path}: invalid JSON: {e}")
    network = NetworkConfig(**document["network"])
    train_config = TrainConfig(**document["training"]) if "training" in document else None
    state = TrainState(**document["state"]) if "state" in document else None
    return network, train_config, state


def load_checkpoint(
    directory: Union[str, Path],
    device: Union[str, torch.device] = "cpu",
) -> Tuple[FlashDenoiseNet, Optional[TrainConfig], Optional[TrainState]]:
    """Rebuild the network from a checkpoint directory"""
    directory = Path(directory)
    network, train_config, state = read_checkpoint_config(directory)
    model = load_weights(directory / WEIGHTS_FILE, FlashDenoiseNet(network))
    logger.info(f"Loaded {network.variant.value} network from {directory}")
    return model.to(device), train_config, state


def load_optimizer_state(directory: Union[str, Path], optimizer: torch.optim.Optimizer) -> bool:
    """Restore the optimizer if the checkpoint has its state; returns whether it did"""
    path = Path(directory) / OPTIMIZER_FILE
    if not path.is_file():
        logger.warning(f"No optimizer state in {directory}; resuming with a fresh optimizer")
        return False
    optimizer.load_state_dict(torch.load(path, map_location="cpu"))
    return True
