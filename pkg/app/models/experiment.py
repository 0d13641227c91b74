from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.candidates import TrainHyper
from app.models.gridworld import GridConfig
from app.models.learner import LearnerHyper, LearnerKind
from app.models.scenario import InteractionRecord, RecordStream

BANDIT_SCENARIOS = ("kidney", "magazine")
PREDPREY_SCENARIOS = ("predprey-synthetic", "predprey-fullsim")


class SkewSpec(BaseModel):
    """Sampling distribution over (instance, arm) pairs used to fill a replay buffer."""
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    instance_names: List[str] = Field(min_length=1)
    arm_names: List[str] = Field(min_length=1)
    probabilities: List[List[float]] = Field(description="[instance][arm] sampling mass")
    target: Optional[str] = Field(default=None, description="Arm this skew is built to favour")

    @model_validator(mode="after")
    def _check_distribution(self) -> "SkewSpec":
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (len(self.instance_names), len(self.arm_names)):
            raise ValueError(f"probabilities must be a {len(self.instance_names)}x{len(self.arm_names)} matrix")
        if (p < 0).any():
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {p.sum():.12f}")
        if self.target is not None and self.target not in self.arm_names:
            raise ValueError(f"target '{self.target}' is not one of the arms")
        return self

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float)


class SkewReport(BaseModel):
    skew: str
    confounded: List[float]
    backdoor: List[float]
    confounded_argmax: str
    backdoor_argmax: str
    target: str
    target_is_confounded_argmax: bool
    backdoor_prefers_first: bool


class ReplayBuffer(BaseModel):
    """Ordered training records collected under one skew."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    stream: RecordStream
    skew: str
    seed: int
    instance_names: List[str]
    arm_names: List[str]

    @property
    def size(self) -> int:
        return len(self.stream)

    def __len__(self) -> int:
        return len(self.stream)

    def records(self) -> Iterator[InteractionRecord]:
        return self.stream.records()

    def pair_counts(self) -> np.ndarray:
        counts = np.zeros((len(self.instance_names), len(self.arm_names)), dtype=np.int64)
        np.add.at(counts, (self.stream.instances, self.stream.arms), 1)
        return counts


class StreamMode(str, Enum):
    LOGGED = "logged"
    INTERACTIVE = "interactive"


class ExperimentConfig(BaseModel):
    """One experiment; loaded from JSON or YAML and overridable from the CLI."""
    scenario: str = Field(default="kidney", description="kidney, magazine, predprey-synthetic, predprey-fullsim or a scenario file")
    learners: List[LearnerKind] = Field(default=[LearnerKind.VANILLA_Q, LearnerKind.CTCAT_Q], min_length=1)
    skews: List[Union[str, SkewSpec]] = Field(default=["uniform", "favor-pi2", "favor-pi3", "favor-pi4"])
    buffer_size: int = Field(default=10_000, ge=0)
    stream_length: int = Field(default=100_000, ge=1)
    stream_mode: StreamMode = StreamMode.LOGGED
    epochs: int = Field(default=1, ge=1)
    windows: List[int] = Field(default=[5, 10, 15], min_length=1)
    seeds: int = Field(default=10, ge=1)
    noise_sigma: float = Field(default=0.1, ge=0.0)
    noise_mode: str = Field(default="cell", pattern="^(cell|sample)$")
    hyper: LearnerHyper = Field(default_factory=LearnerHyper)
    deploy_episodes: int = Field(default=100, ge=1)
    readout_epsilon: float = Field(default=0.0, ge=0.0, le=1.0)
    success_matrix_file: Optional[Path] = None
    grid: GridConfig = Field(default_factory=GridConfig)
    train: TrainHyper = Field(default_factory=TrainHyper)
    output_dir: Optional[Path] = None
    seed: Optional[int] = Field(default=None, ge=0)

    @field_validator("windows")
    @classmethod
    def _check_windows(cls, v: List[int]) -> List[int]:
        if any(t < 1 for t in v):
            raise ValueError("observation windows must be >= 1")
        return v

    @property
    def is_predprey(self) -> bool:
        return self.scenario in PREDPREY_SCENARIOS


class ReportRow(BaseModel):
    learner: str
    arm: str
    panel: str
    T: Optional[int] = None
    mean: float
    std: float
    proportion: float
    success: Optional[float] = None


class SeedRecord(BaseModel):
    """Raw outcome of one (seed, learner, panel) unit."""
    seed: int
    learner: str
    panel: str
    estimates: Optional[List[float]] = None
    preferred_arm: Optional[str] = None
    selections: Dict[int, List[float]] = Field(default_factory=dict, description="T -> per-arm selection proportion")
    success: Dict[int, float] = Field(default_factory=dict, description="T -> mean deployment success")
    error: Optional[str] = None


class ResultsReport(BaseModel):
    scenario: str
    master_seed: int
    arm_names: List[str] = Field(default_factory=list)
    rows: List[ReportRow] = Field(default_factory=list)
    records: List[SeedRecord] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)

    @property
    def errors(self) -> List[SeedRecord]:
        return [r for r in self.records if r.error is not None]

    def panels(self) -> List[str]:
        return list(dict.fromkeys(row.panel for row in self.rows))
