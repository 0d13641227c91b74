from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.scenario import ArmId, InstanceId


class SuccessMatrix(BaseModel):
    """Success probability of every (teammate instance, candidate policy) pairing."""
    model_config = ConfigDict(frozen=True)

    instance_names: List[str] = Field(min_length=1)
    arm_names: List[str] = Field(min_length=1)
    rates: List[List[float]]
    spreads: Optional[List[List[Optional[float]]]] = None

    @model_validator(mode="after")
    def _check_shape(self) -> "SuccessMatrix":
        shape = (len(self.instance_names), len(self.arm_names))
        if len(self.rates) != shape[0] or any(len(row) != shape[1] for row in self.rates):
            raise ValueError(f"rates must be a {shape[0]}x{shape[1]} matrix")
        for i, row in enumerate(self.rates):
            for j, rate in enumerate(row):
                if not 0.0 <= rate <= 1.0:
                    raise ValueError(f"rate ({self.instance_names[i]}, {self.arm_names[j]}) = {rate} is outside [0, 1]")
        if self.spreads is not None:
            if len(self.spreads) != shape[0] or any(len(row) != shape[1] for row in self.spreads):
                raise ValueError("spreads must have the same shape as rates")
        return self

    @property
    def n_instances(self) -> int:
        return len(self.instance_names)

    @property
    def n_arms(self) -> int:
        return len(self.arm_names)

    def rate(self, instance: InstanceId, arm: ArmId) -> float:
        return self.rates[instance][arm]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    def instance_index(self, name: str) -> InstanceId:
        return self.instance_names.index(name)

    def arm_index(self, name: str) -> ArmId:
        return self.arm_names.index(name)

    def row_argmax(self) -> List[ArmId]:
        """Best arm per instance; ties go to the lowest arm index."""
        return [int(np.argmax(row)) for row in self.rates]

    def best_response_shared(self, arm: ArmId = 0, margin: float = 0.0) -> bool:
        """True if ``arm`` beats every other arm by more than ``margin`` in every row."""
        for row in self.as_array():
            others = np.delete(row, arm)
            if others.size and row[arm] - others.max() <= margin:
                return False
        return True


class TrainHyper(BaseModel):
    """Self-play training schedule for one candidate policy."""
    episodes: int = Field(default=1500, ge=1)
    learning_rate: float = Field(default=0.2, gt=0.0, le=1.0)
    discount: float = Field(default=0.95, gt=0.0, le=1.0)
    epsilon_start: float = Field(default=0.3, ge=0.0, le=1.0)
    epsilon_end: float = Field(default=0.02, ge=0.0, le=1.0)
    shaping: float = Field(default=0.1, ge=0.0, description="Potential scale on the distance to a free capture cell")
    eval_episodes: int = Field(default=100, ge=1)
    success_floor: float = Field(default=0.8, ge=0.0, le=1.0)

    def epsilon(self, episode: int) -> float:
        """Linear decay from epsilon_start to epsilon_end over the episode budget."""
        if self.episodes <= 1:
            return self.epsilon_end
        frac = min(episode / (self.episodes - 1), 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class PairEvaluation(BaseModel):
    instance: str
    arm: str
    rate: float = Field(ge=0.0, le=1.0)
    spread: float = Field(ge=0.0)
    runs: List[float]
    mean_steps: float
