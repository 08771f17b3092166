import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from app.core.config import settings
from app.core.exceptions import NonFiniteLossError
from app.models.network import FlashDenoiseNet
from app.schemas.imaging import Gamma, RenderParams
from app.schemas.simulation import SimulationConfig
from app.schemas.training import TrainConfig, TrainRecord, TrainState
from app.services.imaging_service import LinearImage, check_same_shape, psnr, render_srgb, render_srgb_torch
from app.services.network_service import model_device, predict
from app.storage.checkpoint import load_checkpoint, load_optimizer_state, save_checkpoint
from app.storage.dataset import SimulatedPairDataset

logger = logging.getLogger(__name__)

LOG_FILE = "train_log.jsonl"
# Validation samples come from a disjoint part of the sample stream
VALIDATION_OFFSET = 2 ** 31


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def compute_loss(pred: LinearImage, target: LinearImage, rp: RenderParams, eta: float) -> float:
    """
    Rendered-space loss for one image pair.

    MSE between the rendered images plus eta times the mean absolute
    difference of their horizontal and vertical forward differences.
    """
    check_same_shape(pred, target)
    diff = render_srgb(pred, rp) - render_srgb(target, rp)
    loss = float(np.mean(diff ** 2))
    if eta > 0:
        loss += eta * (float(np.mean(np.abs(np.diff(diff, axis=1)))) + float(np.mean(np.abs(np.diff(diff, axis=0)))))
    return loss


def rendered_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    gain: torch.Tensor,
    color_matrix: torch.Tensor,
    eta: float,
    gamma: Gamma = Gamma.SRGB,
) -> torch.Tensor:
    """Batched, differentiable compute_loss over B x 3 x H x W tensors"""
    diff = render_srgb_torch(pred, gain, color_matrix, gamma) - render_srgb_torch(target, gain, color_matrix, gamma)
    loss = diff.pow(2).mean()
    if eta > 0:
        dx = diff[..., :, 1:] - diff[..., :, :-1]
        dy = diff[..., 1:, :] - diff[..., :-1, :]
        loss = loss + eta * (dx.abs().mean() + dy.abs().mean())
    return loss


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def make_datasets(
    sim_config: SimulationConfig,
    train_config: TrainConfig,
    model: FlashDenoiseNet,
    cache_dir: Optional[Union[str, Path]] = None,
) -> Tuple[SimulatedPairDataset, SimulatedPairDataset]:
    """Training stream (one fresh sample per slot) and a fixed validation set"""
    variant = model.config.variant
    train_length = max(1, train_config.max_steps * train_config.batch_size)
    train_data = SimulatedPairDataset(
        sim_config,
        train_config.seed,
        train_length,
        variant=variant,
        single_sample=train_config.single_sample,
        cache_dir=cache_dir,
    )
    val_data = SimulatedPairDataset(
        sim_config,
        train_config.seed,
        train_config.n_val,
        variant=variant,
        offset=0 if train_config.single_sample else VALIDATION_OFFSET,
        single_sample=train_config.single_sample,
        cache_dir=cache_dir,
    )
    return train_data, val_data


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: FlashDenoiseNet
    state: TrainState
    checkpoint_dir: Optional[Path] = None


def _to_device(batch: Dict[str, torch.Tensor], device: torch.device, dtype: torch.dtype) -> Dict[str, torch.Tensor]:
    return {key: value.to(device=device, dtype=dtype) for key, value in batch.items()}


def _append_log(output_dir: Optional[Path], record: Dict) -> None:
    if output_dir is None:
        return
    with open(output_dir / LOG_FILE, "a") as fid:
        fid.write(json.dumps(record) + "\n")


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def validate(model: FlashDenoiseNet, val_data: Dataset, eta: float) -> Tuple[float, float]:
    """Mean rendered loss and mean rendered PSNR over the validation set"""
    device = model_device(model)
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    losses, psnrs = [], []
    with torch.no_grad():
        for index in range(len(val_data)):
            item = _to_device(val_data[index], device, dtype)
            inputs = item["inputs"].unsqueeze(0)
            target = item["target"].unsqueeze(0)
            gain = item["gain"].view(1)
            color_matrix = item["color_matrix"].unsqueeze(0)
            pred = predict(model, inputs)
            losses.append(float(rendered_loss(pred, target, gain, color_matrix, eta)))
            rendered_pred = render_srgb_torch(pred, gain, color_matrix)[0].cpu().double().numpy()
            rendered_target = render_srgb_torch(target, gain, color_matrix)[0].cpu().double().numpy()
            psnrs.append(psnr(rendered_pred, rendered_target))
    model.train(was_training)
    finite = [value for value in psnrs if math.isfinite(value)]
    mean_psnr = float(np.mean(finite)) if finite else float("inf")
    return float(np.mean(losses)), mean_psnr


def update_schedule(state: TrainState, val_loss: float, config: TrainConfig) -> bool:
    """
    Track the best validation loss and drop the learning rate after
    ``patience`` validations without improvement. Returns True on a drop.
    """
    if state.best_val_loss is None or val_loss < state.best_val_loss:
        state.best_val_loss = val_loss
        state.validations_since_best = 0
        return False
    state.validations_since_best += 1
    if state.validations_since_best >= config.patience and state.drops < config.max_drops:
        state.lr *= config.lr_drop_factor
        state.drops += 1
        state.validations_since_best = 0
        return True
    return False


def train(
    model: FlashDenoiseNet,
    train_data: Dataset,
    val_data: Dataset,
    config: TrainConfig,
    output_dir: Optional[Union[str, Path]] = None,
    resume_from: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """
    Train with Adam on the rendered-space loss.

    Batches are drawn in a fixed order (step s uses items s*B ... s*B+B-1), so a
    run is reproducible from its seed and a resumed run continues the same
    stream. Validation runs every ``val_interval`` steps and drives the
    learning-rate schedule.

    Raises:
        NonFiniteLossError: if a training loss is NaN or infinite; a diagnostic
        checkpoint ``nan_step_{step}`` is written first when output_dir is set
    """
    output_dir = Path(output_dir) if output_dir else None
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)
    device = model_device(model)
    dtype = next(model.parameters()).dtype

    state = TrainState(lr=config.lr_init)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_init)
    if resume_from is not None:
        restored, _, saved_state = load_checkpoint(resume_from, device)
        model.load_state_dict(restored.state_dict())
        if saved_state is not None:
            state = saved_state
        load_optimizer_state(resume_from, optimizer)
        _set_lr(optimizer, state.lr)
        logger.info(f"Resuming from {resume_from} at step {state.step} (lr={state.lr:g}, drops={state.drops})")
    elif output_dir is not None:
        (output_dir / LOG_FILE).unlink(missing_ok=True)
        _append_log(output_dir, {"event": "start", "eta": config.eta, "lr": config.lr_init, "seed": config.seed})

    if state.step >= config.max_steps:
        logger.info("Nothing to train: max_steps already reached")
        checkpoint_dir = None
        if output_dir is not None:
            checkpoint_dir = save_checkpoint(output_dir / "final", model, config, state, optimizer)
        return TrainResult(model=model, state=state, checkpoint_dir=checkpoint_dir)

    start = state.step * config.batch_size
    order = [index % len(train_data) for index in range(start, config.max_steps * config.batch_size)]
    loader = DataLoader(
        train_data,
        batch_size=config.batch_size,
        sampler=order,
        num_workers=settings.NUM_WORKERS,
        drop_last=False,
    )

    model.train()
    running_loss, running_count = 0.0, 0
    for batch in loader:
        batch = _to_device(batch, device, dtype)
        optimizer.zero_grad()
        pred = predict(model, batch["inputs"])
        loss = rendered_loss(pred, batch["target"], batch["gain"], batch["color_matrix"], config.eta)
        if not torch.isfinite(loss):
            checkpoint_dir = ""
            if output_dir is not None:
                checkpoint_dir = str(save_checkpoint(output_dir / f"nan_step_{state.step}", model, config, state))
            logger.error(f"Non-finite loss at step {state.step}")
            raise NonFiniteLossError(state.step, checkpoint_dir)
        loss.backward()
        optimizer.step()
        state.step += 1
        running_loss += float(loss)
        running_count += 1

        if state.step % config.val_interval == 0 or state.step == config.max_steps:
            val_loss, val_psnr = validate(model, val_data, config.eta)
            record = TrainRecord(
                step=state.step,
                lr=state.lr,
                train_loss=running_loss / running_count,
                val_loss=val_loss,
                val_psnr=val_psnr if math.isfinite(val_psnr) else None,
            )
            state.history.append(record)
            _append_log(output_dir, record.model_dump())
            logger.info(
                f"step {state.step}: train_loss={record.train_loss:.6f} val_loss={val_loss:.6f} "
                f"val_psnr={val_psnr:.2f} lr={state.lr:g}"
            )
            running_loss, running_count = 0.0, 0
            if update_schedule(state, val_loss, config):
                _set_lr(optimizer, state.lr)
                logger.info(f"Validation loss saturated; learning rate dropped to {state.lr:g}")

        if output_dir is not None and state.step % config.checkpoint_interval == 0:
            save_checkpoint(output_dir / "checkpoints" / f"step_{state.step:08d}", model, config, state, optimizer)

    checkpoint_dir = None
    if output_dir is not None:
        checkpoint_dir = save_checkpoint(output_dir / "final", model, config, state, optimizer)
    return TrainResult(model=model, state=state, checkpoint_dir=checkpoint_dir)
