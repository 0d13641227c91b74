"""
Online arm-selection learners sharing one interface.

Every learner consumes InteractionRecords through ``observe`` and exposes
``select_arm``, ``arm_estimates`` and ``greedy_arm``. ``CtcatQ`` is tabular Q
with each reward rescaled by the runtime rectification weight.
"""

import logging
import math
from typing import List, Optional, Sequence, Union

import numpy as np

from app.core.errors import ConfounderUnobservedError, UnsupportedRewardError
from app.models.counts import CountTable
from app.models.learner import ArmEstimates, LearnerHyper, LearnerKind
from app.models.scenario import ArmId, InstanceId, InteractionRecord, RecordStream
from app.services.rectifier import update_counts, weight

logger = logging.getLogger(__name__)


def preferred_arm(estimates: Union[ArmEstimates, Sequence[float]]) -> ArmId:
    """Arm with the highest estimate; ties go to the lowest index."""
    values = estimates.values if isinstance(estimates, ArmEstimates) else list(estimates)
    if not values:
        raise ValueError("preferred_arm needs at least one estimate")
    return int(np.argmax(values))


class Learner:
    """Base class. Subclasses implement _update, select_arm and _values."""

    kind: LearnerKind

    def __init__(self, n_arms: int, hyper: LearnerHyper, arm_names: Optional[List[str]] = None):
        if n_arms < 1:
            raise ValueError("a learner needs at least one arm")
        self.n_arms = n_arms
        self.hyper = hyper
        self.arm_names = arm_names
        self.t = 0

    def observe(self, record: InteractionRecord) -> "Learner":
        if record.arm >= self.n_arms:
            raise ValueError(f"arm {record.arm} outside arm set of size {self.n_arms}")
        self._update(record.instance, record.arm, record.reward)
        self.t += 1
        return self

    def observe_stream(self, stream: RecordStream, epochs: int = 1) -> "Learner":
        """Observe every record of a stream in order, ``epochs`` times."""
        instances = stream.instances.tolist()
        arms = stream.arms.tolist()
        rewards = stream.rewards.tolist()
        if arms and max(arms) >= self.n_arms:
            raise ValueError(f"stream holds arm {max(arms)} outside arm set of size {self.n_arms}")
        for _ in range(epochs):
            for instance, arm, reward in zip(instances, arms, rewards):
                self._update(instance, arm, reward)
                self.t += 1
        return self

    def arm_estimates(self) -> ArmEstimates:
        return ArmEstimates(values=[float(v) for v in self._values()], names=self.arm_names)

    def greedy_arm(self) -> ArmId:
        return preferred_arm(self._values())

    def select_arm(self, rng: np.random.Generator) -> ArmId:
        raise NotImplementedError

    def _update(self, instance: Optional[InstanceId], arm: ArmId, reward: float) -> None:
        raise NotImplementedError

    def _values(self) -> np.ndarray:
        raise NotImplementedError


class QLearner(Learner):
    """Single-state tabular Q: Q <- Q + alpha_t (r - Q), epsilon-greedy selection."""

    kind = LearnerKind.VANILLA_Q

    def __init__(self, n_arms: int, hyper: LearnerHyper, arm_names: Optional[List[str]] = None):
        super().__init__(n_arms, hyper, arm_names)
        self.q = np.full(n_arms, self._initial_value(), dtype=float)
        self.visits = np.zeros(n_arms, dtype=np.int64)

    def _initial_value(self) -> float:
        return 0.0

    def step_size(self, arm: ArmId) -> float:
        return self.hyper.learning_rate / (1.0 + self.hyper.learning_rate_decay * int(self.visits[arm]))

    def _q_update(self, arm: ArmId, target: float) -> None:
        alpha = self.step_size(arm)
        self.q[arm] += alpha * (target - self.q[arm])
        self.visits[arm] += 1

    def _update(self, instance: Optional[InstanceId], arm: ArmId, reward: float) -> None:
        self._q_update(arm, reward)

    def select_arm(self, rng: np.random.Generator) -> ArmId:
        if rng.random() < self.hyper.epsilon:
            return int(rng.integers(self.n_arms))
        return self.greedy_arm()

    def _values(self) -> np.ndarray:
        return self.q


class OptimisticQ(QLearner):
    kind = LearnerKind.OPTIMISTIC_Q

    def _initial_value(self) -> float:
        return self.hyper.optimistic_value


class CtcatQ(QLearner):
    """Tabular Q trained on rectified rewards r * p(pi | type) / p(pi | type, n).

    The counters are updated with the record before its weight is computed.
    """

    kind = LearnerKind.CTCAT_Q

    def __init__(self, n_arms: int, hyper: LearnerHyper, n_instances: int, arm_names: Optional[List[str]] = None):
        super().__init__(n_arms, hyper, arm_names)
        self.counts = CountTable(n_instances, n_arms)
        self.weight_config = hyper.weights
        self.last_target: Optional[float] = None

    def _update(self, instance: Optional[InstanceId], arm: ArmId, reward: float) -> None:
        if instance is None:
            raise ConfounderUnobservedError("ctcat_q needs the teammate instance of every record")
        if instance >= self.counts.n_instances:
            raise ValueError(f"instance {instance} outside instance set of size {self.counts.n_instances}")
        update_counts(self.counts, instance, arm)
        self.last_target = reward * weight(self.counts, instance, arm, self.weight_config)
        self._q_update(arm, self.last_target)


class UCB1(Learner):
    """UCB1 index policy; estimates are empirical means."""

    kind = LearnerKind.UCB1

    def __init__(self, n_arms: int, hyper: LearnerHyper, arm_names: Optional[List[str]] = None):
        super().__init__(n_arms, hyper, arm_names)
        self.pulls = np.zeros(n_arms, dtype=np.int64)
        self.sums = np.zeros(n_arms, dtype=float)

    def _update(self, instance: Optional[InstanceId], arm: ArmId, reward: float) -> None:
        self.pulls[arm] += 1
        self.sums[arm] += reward

    def select_arm(self, rng: np.random.Generator) -> ArmId:
        unpulled = np.flatnonzero(self.pulls == 0)
        if unpulled.size:
            return int(unpulled[0])
        total = int(self.pulls.sum())
        index = self._values() + np.sqrt(2.0 * math.log(total) / self.pulls)
        return int(np.argmax(index))

    def _values(self) -> np.ndarray:
        return np.divide(self.sums, self.pulls, out=np.zeros(self.n_arms), where=self.pulls > 0)


class EXP3(Learner):
    """EXP3 with mixing gamma. Weights are kept in log space; estimates are the normalized weights."""

    kind = LearnerKind.EXP3

    def __init__(self, n_arms: int, hyper: LearnerHyper, arm_names: Optional[List[str]] = None):
        super().__init__(n_arms, hyper, arm_names)
        self.log_weights = np.zeros(n_arms, dtype=float)

    def _normalized_weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    def probabilities(self) -> np.ndarray:
        gamma = self.hyper.exp3_gamma
        return (1.0 - gamma) * self._normalized_weights() + gamma / self.n_arms

    def _update(self, instance: Optional[InstanceId], arm: ArmId, reward: float) -> None:
        p = self.probabilities()[arm]
        self.log_weights[arm] += self.hyper.exp3_gamma * (reward / p) / self.n_arms

    def select_arm(self, rng: np.random.Generator) -> ArmId:
        return int(rng.choice(self.n_arms, p=self.probabilities()))

    def _values(self) -> np.ndarray:
        return self._normalized_weights()


class ThompsonSampling(Learner):
    """Beta-Bernoulli Thompson sampling; rewards must be 0 or 1."""

    kind = LearnerKind.THOMPSON

    def __init__(self, n_arms: int, hyper: LearnerHyper, arm_names: Optional[List[str]] = None):
        super().__init__(n_arms, hyper, arm_names)
        self.alpha = np.ones(n_arms, dtype=float)
        self.beta = np.ones(n_arms, dtype=float)

    def _update(self, instance: Optional[InstanceId], arm: ArmId, reward: float) -> None:
        if reward == 1.0:
            self.alpha[arm] += 1.0
        elif reward == 0.0:
            self.beta[arm] += 1.0
        else:
            raise UnsupportedRewardError(f"thompson sampling needs rewards in {{0, 1}}, got {reward}")

    def select_arm(self, rng: np.random.Generator) -> ArmId:
        return int(np.argmax(rng.beta(self.alpha, self.beta)))

    def _values(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)


_LEARNERS = {
    LearnerKind.VANILLA_Q: QLearner,
    LearnerKind.OPTIMISTIC_Q: OptimisticQ,
    LearnerKind.UCB1: UCB1,
    LearnerKind.EXP3: EXP3,
    LearnerKind.THOMPSON: ThompsonSampling,
}


def make_learner(
    kind: Union[LearnerKind, str],
    n_arms: int,
    hyper: Optional[LearnerHyper] = None,
    n_instances: Optional[int] = None,
    arm_names: Optional[List[str]] = None,
) -> Learner:
    """Build a fresh learner of the given kind.

    Args:
        kind: Learner kind or its string value
        n_arms: Size of the arm set
        hyper: Hyperparameters (defaults when omitted)
        n_instances: Number of teammate instances; required for ctcat_q
        arm_names: Optional display names carried into the estimates

    Returns:
        Learner: initialized over arms 0..n_arms-1
    """
    kind = LearnerKind(kind)
    hyper = hyper or LearnerHyper()
    logger.debug(f"Building {kind.value} over {n_arms} arms")
    if kind is LearnerKind.CTCAT_Q:
        if n_instances is None:
            raise ValueError("ctcat_q needs the number of teammate instances")
        return CtcatQ(n_arms, hyper, n_instances, arm_names)
    return _LEARNERS[kind](n_arms, hyper, arm_names)
