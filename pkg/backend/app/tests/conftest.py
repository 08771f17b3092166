import numpy as np
import pytest
import torch

from app.schemas.evaluation import EvalProtocol
from app.schemas.network import NetworkConfig
from app.schemas.simulation import SimulationConfig
from app.schemas.training import TrainConfig
from app.services.network_service import create_model
from app.services.simulation_service import sample_training_sample


@pytest.fixture(scope="function")
def rng():
    """Fresh seeded generator for each test"""
    return np.random.default_rng(0)


@pytest.fixture(scope="function")
def tiny_network_config():
    """Smallest configuration that still exercises every network path"""
    return NetworkConfig(J=4, K=5, d=2, base_channels=8)


@pytest.fixture(scope="function")
def tiny_sim_config():
    return SimulationConfig(crop_size=64)


@pytest.fixture(scope="function")
def tiny_sample(tiny_sim_config):
    """A 64x64 simulated pair with a non-trivial warp"""
    return sample_training_sample(tiny_sim_config, seed=0, index=0)


@pytest.fixture(scope="function")
def tiny_model(tiny_network_config):
    torch.manual_seed(0)
    return create_model(tiny_network_config, seed=0)


@pytest.fixture(scope="function")
def tiny_train_config():
    return TrainConfig(batch_size=2, max_steps=4, val_interval=2, n_val=2, checkpoint_interval=2, seed=0)


@pytest.fixture(scope="function")
def tiny_protocol():
    """Evaluation protocol small enough for unit tests"""
    return EvalProtocol(
        dim_factors=[50.0, 12.5],
        n_images=2,
        crop_size=64,
        displacement_bins=[0.0, 2.0],
        noise_levels=[(-2.8, -4.0)],
        n_triptychs=1,
        seed=7,
    )
