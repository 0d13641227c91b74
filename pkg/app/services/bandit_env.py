"""
Confounded bandit environments built from a ContingencyTable.

Logged mode replays the historical (instance, arm) assignment; interactive mode
lets a learner pick the arm and draws the instance from p(n | arm).
"""

import logging
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import CoverageError
from app.models.scenario import ArmId, ContingencyTable, InteractionRecord, MarginalSet, RecordStream
from app.services.scenario_service import table_marginals

logger = logging.getLogger(__name__)


class NoiseMode(str, Enum):
    CELL = "cell"      # one draw per cell, fixed for the run
    SAMPLE = "sample"  # a fresh draw on every outcome


class NoisyRateTable(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    base: ContingencyTable
    rates: np.ndarray
    sigma: float = Field(ge=0.0)
    mode: NoiseMode = NoiseMode.CELL


class InteractiveEnv(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rates: NoisyRateTable
    marginals: MarginalSet


def apply_noise(table: ContingencyTable, sigma: float, rng: np.random.Generator, mode: NoiseMode = NoiseMode.CELL) -> NoisyRateTable:
    """Perturb the success probability of every cell with N(0, sigma), clamped to [0, 1].

    In SAMPLE mode the rates stay exact here and the perturbation is drawn per outcome.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    exact = table_marginals(table).success_rate
    mode = NoiseMode(mode)
    if mode is NoiseMode.CELL and sigma > 0:
        rates = np.clip(exact + rng.normal(0.0, sigma, size=exact.shape), 0.0, 1.0)
    else:
        rates = exact.copy()
    logger.debug(f"Applied {mode.value} noise with sigma {sigma} to a {table.n_instances}x{table.n_arms} table")
    return NoisyRateTable(base=table, rates=rates, sigma=sigma, mode=mode)


def _success_probability(rates: NoisyRateTable, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if rates.mode is NoiseMode.SAMPLE and rates.sigma > 0:
        return np.clip(p + rng.normal(0.0, rates.sigma, size=np.shape(p)), 0.0, 1.0)
    return p


def sample_logged_stream(rates: NoisyRateTable, size: int, rng: np.random.Generator) -> RecordStream:
    """Draw ``size`` records following the historical joint of (instance, arm)."""
    trials = rates.base.trials_matrix().astype(float)
    n_arms = trials.shape[1]
    flat = rng.choice(trials.size, size=size, p=(trials / trials.sum()).ravel())
    instances = flat // n_arms
    arms = flat % n_arms
    p = _success_probability(rates, rates.rates[instances, arms], rng)
    rewards = (rng.random(size) < p).astype(float)
    return RecordStream(type_id=rates.base.type_id, instances=instances, arms=arms, rewards=rewards)


def sample_logged_record(rates: NoisyRateTable, rng: np.random.Generator) -> InteractionRecord:
    return next(sample_logged_stream(rates, 1, rng).records())


def make_interactive_env(rates: NoisyRateTable) -> InteractiveEnv:
    return InteractiveEnv(rates=rates, marginals=table_marginals(rates.base))


def env_step(env: InteractiveEnv, arm: ArmId, rng: np.random.Generator) -> InteractionRecord:
    """Play one arm: draw the teammate instance from p(n | arm), then a Bernoulli outcome."""
    base = env.rates.base
    if arm >= base.n_arms:
        raise ValueError(f"arm {arm} outside arm set of size {base.n_arms}")
    p_instance = env.marginals.p_instance_given_arm[arm]
    if p_instance.sum() == 0:
        logger.debug(f"Interactive step on arm {arm} with no logged trials")
        raise CoverageError(f"arm '{base.arm_names[arm]}' has no trials to draw instances from")
    instance = int(rng.choice(base.n_instances, p=p_instance))
    p = _success_probability(env.rates, env.rates.rates[instance, arm], rng)
    reward = 1.0 if rng.random() < p else 0.0
    return InteractionRecord(type_id=base.type_id, instance=instance, arm=arm, reward=reward)
