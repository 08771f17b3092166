"""
Simulated training data: sample files and a torch Dataset.

Samples are a pure function of (SimulationConfig, seed, index), so the dataset
needs no state beyond its configuration; the optional cache only saves the
synthesis cost.
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch
from torch.utils.data import Dataset

from app.schemas.imaging import Homography, RenderParams
from app.schemas.network import Variant
from app.schemas.simulation import NoiseParams, Reference, SimulationConfig
from app.services.network_service import build_input
from app.services.simulation_service import SamplePair, sample_training_sample
from app.storage.container import read_container, write_container

logger = logging.getLogger(__name__)

SAMPLE_ARRAYS = ("x_f", "x_nf", "noise_map_f", "noise_map_nf", "y", "clean_f", "clean_nf")


def sample_filename(seed: int) -> str:
    return f"sample_{seed:08d}.fnfc"


def save_sample(path: Union[str, Path], sample: SamplePair, config: Optional[SimulationConfig] = None) -> Path:
    """
    Write a SamplePair to an FNFC container (float64 arrays, JSON parameters).

    With ``config`` the generating SimulationConfig is stored alongside so a
    cache can tell whether the file still matches its configuration.
    """
    arrays = {
        name: np.asarray(getattr(sample, name), dtype=np.float64)
        for name in SAMPLE_ARRAYS
        if getattr(sample, name) is not None
    }
    metadata = {
        "render": sample.render.model_dump(mode="json"),
        "noise": sample.noise.model_dump(mode="json"),
        "homography": sample.homography.model_dump(mode="json"),
        "reference": sample.reference.value,
        "dim_factor": sample.dim_factor,
    }
    if config is not None:
        metadata["simulation"] = config.model_dump(mode="json")
    return write_container(path, arrays, metadata)


def load_sample(path: Union[str, Path]) -> SamplePair:
    return sample_from_container(*read_container(path))


def sample_from_container(arrays: Dict[str, np.ndarray], metadata: Dict) -> SamplePair:
    return SamplePair(
        x_f=arrays["x_f"],
        x_nf=arrays["x_nf"],
        noise_map_f=arrays["noise_map_f"],
        noise_map_nf=arrays["noise_map_nf"],
        y=arrays["y"],
        render=RenderParams(**metadata["render"]),
        noise=NoiseParams(**metadata["noise"]),
        homography=Homography(**metadata["homography"]),
        reference=Reference(metadata["reference"]),
        dim_factor=float(metadata["dim_factor"]),
        clean_f=arrays.get("clean_f"),
        clean_nf=arrays.get("clean_nf"),
    )


def load_cached_sample(path: Union[str, Path], config: SimulationConfig) -> Optional[SamplePair]:
    """Sample at path if it was generated with config, else None"""
    path = Path(path)
    if not path.is_file():
        return None
    arrays, metadata = read_container(path)
    if metadata.get("simulation") != config.model_dump(mode="json"):
        logger.warning(f"Cached sample {path} was generated with a different simulation config; regenerating")
        return None
    return sample_from_container(arrays, metadata)


def sample_to_tensors(sample: SamplePair, variant: Variant = Variant.OURS) -> Dict[str, torch.Tensor]:
    """Channels-first float32 tensors for one sample, ready for default collation"""
    def chw(array: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1), dtype=np.float32))

    return {
        "inputs": chw(build_input(sample, variant)),
        "target": chw(sample.y),
        "gain": torch.tensor(sample.render.gain, dtype=torch.float32),
        "color_matrix": torch.from_numpy(sample.render.matrix.astype(np.float32)),
    }


class SimulatedPairDataset(Dataset):
    """
    Index-deterministic simulated pairs.

    Item ``i`` is ``sample_training_sample(config, seed, offset + i)``. With
    ``single_sample`` every index returns the same sample.
    """

    def __init__(
        self,
        config: SimulationConfig,
        seed: int,
        length: int,
        variant: Variant = Variant.OURS,
        offset: int = 0,
        single_sample: bool = False,
        cache_dir: Optional[Union[str, Path]] = None,
    ):
        self.config = config
        self.seed = seed
        self.length = length
        self.variant = variant
        self.offset = offset
        self.single_sample = single_sample
        self.cache_dir = Path(cache_dir) if cache_dir else None

    def __len__(self) -> int:
        return self.length

    def sample(self, index: int) -> SamplePair:
        if index < 0 or index >= self.length:
            raise IndexError(f"index {index} out of range for dataset of length {self.length}")
        stream_index = self.offset if self.single_sample else self.offset + index
        if self.cache_dir is None:
            return sample_training_sample(self.config, self.seed, stream_index)

        path = self.cache_dir / f"{self.seed}" / sample_filename(stream_index)
        cached = load_cached_sample(path, self.config)
        if cached is not None:
            return cached
        sample = sample_training_sample(self.config, self.seed, stream_index)
        save_sample(path, sample, self.config)
        logger.debug(f"Cached sample {stream_index} to {path}")
        return sample

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        return sample_to_tensors(self.sample(index), self.variant)
