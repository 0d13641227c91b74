from typing import Iterator, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Small non-negative integer labels. Names live on the tables that define them.
TypeId = int
InstanceId = int
ArmId = int


class InteractionRecord(BaseModel):
    """One (type, instance, arm, reward) observation."""
    model_config = ConfigDict(frozen=True)

    type_id: TypeId = Field(default=0, ge=0)
    instance: Optional[InstanceId] = Field(default=None, ge=0, description="None when the confounder was not observed")
    arm: ArmId = Field(ge=0)
    reward: float = Field(allow_inf_nan=False)


class Cell(BaseModel):
    model_config = ConfigDict(frozen=True)

    instance: InstanceId = Field(ge=0)
    arm: ArmId = Field(ge=0)
    successes: int = Field(ge=0)
    trials: int = Field(ge=0)


class ContingencyTable(BaseModel):
    """Success/trial counts of every (instance, arm) cell for one teammate type."""
    model_config = ConfigDict(frozen=True)

    type_id: TypeId = Field(default=0, ge=0)
    instance_names: List[str] = Field(min_length=1)
    arm_names: List[str] = Field(min_length=1)
    cells: List[Cell]

    @model_validator(mode="after")
    def _check_cells(self) -> "ContingencyTable":
        seen = set()
        for cell in self.cells:
            if cell.instance >= len(self.instance_names) or cell.arm >= len(self.arm_names):
                raise ValueError(f"cell ({cell.instance}, {cell.arm}) references an unknown instance or arm")
            key = (cell.instance, cell.arm)
            if key in seen:
                raise ValueError(f"cell {self.cell_label(*key)} is listed twice")
            seen.add(key)
            if cell.successes > cell.trials:
                raise ValueError(
                    f"cell {self.cell_label(*key)}: successes {cell.successes} exceed trials {cell.trials}"
                )
        if sum(cell.trials for cell in self.cells) == 0:
            raise ValueError("table has no trials")
        return self

    @property
    def n_instances(self) -> int:
        return len(self.instance_names)

    @property
    def n_arms(self) -> int:
        return len(self.arm_names)

    def cell_label(self, instance: InstanceId, arm: ArmId) -> str:
        return f"({self.instance_names[instance]}, {self.arm_names[arm]})"

    def instance_index(self, name: str) -> InstanceId:
        return self.instance_names.index(name)

    def arm_index(self, name: str) -> ArmId:
        return self.arm_names.index(name)

    def trials_matrix(self) -> np.ndarray:
        """Integer matrix of trials, shape (instances, arms); absent cells are 0."""
        trials = np.zeros((self.n_instances, self.n_arms), dtype=np.int64)
        for cell in self.cells:
            trials[cell.instance, cell.arm] = cell.trials
        return trials

    def successes_matrix(self) -> np.ndarray:
        successes = np.zeros((self.n_instances, self.n_arms), dtype=np.int64)
        for cell in self.cells:
            successes[cell.instance, cell.arm] = cell.successes
        return successes


class MarginalSet(BaseModel):
    """Conditional distributions derived from a ContingencyTable.

    Arrays are indexed [instance, arm] except p_instance_given_arm, which is
    indexed [arm, instance] to mirror p(n | pi).
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    instance_names: List[str]
    arm_names: List[str]
    p_instance_given_type: np.ndarray
    p_arm_given_type: np.ndarray
    p_instance_given_arm: np.ndarray
    p_arm_given_instance: np.ndarray
    success_rate: np.ndarray
    covered: np.ndarray


class RecordStream(BaseModel):
    """Column-wise batch of interaction records, as produced by stream samplers."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    type_id: TypeId = 0
    instances: np.ndarray
    arms: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return len(self.arms)

    def records(self) -> Iterator[InteractionRecord]:
        for instance, arm, reward in zip(self.instances, self.arms, self.rewards):
            yield InteractionRecord(type_id=self.type_id, instance=int(instance), arm=int(arm), reward=float(reward))
