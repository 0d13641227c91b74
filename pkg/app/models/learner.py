from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from app.models.counts import WeightConfig


class LearnerKind(str, Enum):
    VANILLA_Q = "vanilla_q"
    CTCAT_Q = "ctcat_q"
    UCB1 = "ucb1"
    EXP3 = "exp3"
    OPTIMISTIC_Q = "optimistic_q"
    THOMPSON = "thompson"


class LearnerHyper(BaseModel):
    """Hyperparameters shared by every learner kind; each kind reads the ones it uses."""
    learning_rate: float = Field(default=0.1, gt=0.0, le=1.0, description="alpha_0")
    learning_rate_decay: float = Field(default=0.02, ge=0.0, description="alpha_t = alpha_0 / (1 + decay * visits)")
    epsilon: float = Field(default=0.1, ge=0.0, le=1.0)
    exp3_gamma: float = Field(default=0.1, ge=0.0, le=1.0)
    optimistic_value: float = Field(default=1.0, allow_inf_nan=False)
    weights: WeightConfig = Field(default_factory=WeightConfig)


class ArmEstimates(BaseModel):
    values: List[float] = Field(min_length=1)
    names: Optional[List[str]] = None

    @model_validator(mode="after")
    def _check_names(self) -> "ArmEstimates":
        if self.names is not None and len(self.names) != len(self.values):
            raise ValueError("names and values must have the same length")
        return self

    def as_dict(self) -> Dict[str, float]:
        names = self.names or [str(i) for i in range(len(self.values))]
        return dict(zip(names, self.values))
