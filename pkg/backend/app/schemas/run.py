from typing import Any, Dict

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.evaluation import EvalProtocol
from app.schemas.network import NetworkConfig
from app.schemas.simulation import SimulationConfig
from app.schemas.training import TrainConfig

__all__ = ["RunConfig", "PRESETS"]


class RunConfig(BaseModel):
    """Top-level JSON config file: one section per stage"""
    model_config = ConfigDict(extra="forbid")

    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvalProtocol = Field(default_factory=EvalProtocol)

    @model_validator(mode="after")
    def align_reference(self) -> "RunConfig":
        """Simulation and network share one geometric reference frame"""
        network_set = "reference" in self.network.model_fields_set
        simulation_set = "reference" in self.simulation.model_fields_set
        if network_set and simulation_set and self.network.reference != self.simulation.reference:
            raise ValueError(
                f"network.reference={self.network.reference.value} conflicts with "
                f"simulation.reference={self.simulation.reference.value}"
            )
        if network_set and not simulation_set:
            self.simulation = self.simulation.model_copy(update={"reference": self.network.reference})
        elif simulation_set and not network_set:
            self.network = self.network.model_copy(update={"reference": self.simulation.reference})
        return self


# Section overrides applied on top of the built-in defaults
PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "desk": {
        "simulation": {"crop_size": 128},
        "network": {"J": 8, "K": 5, "d": 2, "base_channels": 16},
        "evaluation": {"crop_size": 128},
    },
    "full": {
        "simulation": {"crop_size": 440},
        "network": {"J": 90, "K": 15, "d": 4, "base_channels": 64},
    },
}
