from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models.scenario import ArmId, InstanceId, TypeId


class WeightConfig(BaseModel):
    """Smoothing and clipping applied to runtime rectification weights."""
    model_config = ConfigDict(frozen=True)

    smoothing: float = Field(default=1.0, ge=0.0, description="Add-k pseudo-count per arm")
    weight_cap: Optional[float] = Field(default=20.0, gt=0.0, description="None disables the cap")


class CountTable:
    """Runtime counters C(pi | type) and C(pi | type, n).

    Owned by a single learner and updated in place; ``c_arm`` and ``total`` are
    kept in step with ``c_arm_instance`` on every update.
    """

    def __init__(self, n_instances: int, n_arms: int, type_id: TypeId = 0):
        if n_instances < 1 or n_arms < 1:
            raise ValueError("CountTable needs at least one instance and one arm")
        self.type_id = type_id
        self.c_arm_instance = np.zeros((n_instances, n_arms), dtype=np.int64)
        self.c_arm = np.zeros(n_arms, dtype=np.int64)
        self.c_instance = np.zeros(n_instances, dtype=np.int64)
        self.total = 0

    @property
    def n_instances(self) -> int:
        return self.c_arm_instance.shape[0]

    @property
    def n_arms(self) -> int:
        return self.c_arm_instance.shape[1]

    def increment(self, instance: InstanceId, arm: ArmId) -> None:
        self.c_arm_instance[instance, arm] += 1
        self.c_arm[arm] += 1
        self.c_instance[instance] += 1
        self.total += 1

    def copy(self) -> "CountTable":
        other = CountTable(self.n_instances, self.n_arms, self.type_id)
        other.c_arm_instance = self.c_arm_instance.copy()
        other.c_arm = self.c_arm.copy()
        other.c_instance = self.c_instance.copy()
        other.total = self.total
        return other

    def is_consistent(self) -> bool:
        return (
            bool(np.array_equal(self.c_arm, self.c_arm_instance.sum(axis=0)))
            and bool(np.array_equal(self.c_instance, self.c_arm_instance.sum(axis=1)))
            and self.total == int(self.c_arm.sum())
            and bool((self.c_arm_instance >= 0).all())
        )
