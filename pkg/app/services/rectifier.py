"""
Instance-wise feedback rectification.

Runtime weights are estimated from CountTable counters; the closed forms work
on a ContingencyTable and serve as oracles for the learned values.
"""

import logging

import numpy as np

from app.core.errors import CoverageError, UndefinedPropensityError
from app.models.counts import CountTable, WeightConfig
from app.models.scenario import ArmId, ContingencyTable, InstanceId, InteractionRecord
from app.services.scenario_service import table_marginals

logger = logging.getLogger(__name__)

DEFAULT_WEIGHT_CONFIG = WeightConfig()


def update_counts(counts: CountTable, instance: InstanceId, arm: ArmId) -> CountTable:
    """Record one (instance, arm) observation. Returns the same table."""
    counts.increment(instance, arm)
    return counts


def weight(counts: CountTable, instance: InstanceId, arm: ArmId, cfg: WeightConfig = DEFAULT_WEIGHT_CONFIG) -> float:
    """Runtime estimate of p(pi | type) / p(pi | type, n), add-k smoothed and capped.

    Raises:
        UndefinedPropensityError: the pair was never observed and smoothing is 0
    """
    k = cfg.smoothing
    n_arms = counts.n_arms
    pair = int(counts.c_arm_instance[instance, arm])
    if k == 0 and pair == 0:
        logger.debug(f"No observations of (instance {instance}, arm {arm}) among {counts.total} records")
        raise UndefinedPropensityError(
            f"p(arm {arm} | instance {instance}) is undefined: pair never observed and smoothing is 0"
        )
    p_arm = (int(counts.c_arm[arm]) + k) / (counts.total + k * n_arms)
    p_arm_given_instance = (pair + k) / (int(counts.c_instance[instance]) + k * n_arms)
    w = p_arm / p_arm_given_instance
    if cfg.weight_cap is not None and w > cfg.weight_cap:
        logger.debug(f"Weight {w:.3f} for (instance {instance}, arm {arm}) capped at {cfg.weight_cap}")
        w = cfg.weight_cap
    return w


def rectify_reward(counts: CountTable, record: InteractionRecord, cfg: WeightConfig = DEFAULT_WEIGHT_CONFIG) -> float:
    """Scale a record's reward by its rectification weight."""
    return record.reward * weight(counts, record.instance, record.arm, cfg)


def _require_arm_coverage(table: ContingencyTable, trials: np.ndarray, arm: ArmId) -> None:
    missing = np.flatnonzero(trials[:, arm] == 0)
    if missing.size:
        raise CoverageError(f"instance '{table.instance_names[missing[0]]}' has no trials under arm '{table.arm_names[arm]}'")


def backdoor_value(table: ContingencyTable, arm: ArmId) -> float:
    """sum_n p(y | pi, n) p(n | type): the arm's value with the instance mix held at its marginal."""
    trials = table.trials_matrix()
    _require_arm_coverage(table, trials, arm)
    m = table_marginals(table)
    return float(np.dot(m.success_rate[:, arm], m.p_instance_given_type))


def confounded_value(table: ContingencyTable, arm: ArmId) -> float:
    """sum_n p(y | pi, n) p(n | pi, type), i.e. pooled successes over pooled trials of the arm."""
    trials = table.trials_matrix()
    arm_trials = int(trials[:, arm].sum())
    if arm_trials == 0:
        raise CoverageError(f"arm '{table.arm_names[arm]}' was never tried")
    return int(table.successes_matrix()[:, arm].sum()) / arm_trials


def weight_closed_form(table: ContingencyTable, arm: ArmId, instance: InstanceId) -> float:
    """p(n | type) / p(n | pi, type) from exact table counts."""
    trials = table.trials_matrix()
    if trials[instance, arm] == 0:
        raise CoverageError(f"cell {table.cell_label(instance, arm)} has no trials")
    m = table_marginals(table)
    return float(m.p_instance_given_type[instance] / m.p_instance_given_arm[arm, instance])


def weight_bayes_form(table: ContingencyTable, arm: ArmId, instance: InstanceId) -> float:
    """p(pi | type) / p(pi | type, n); equal to weight_closed_form on covered cells."""
    trials = table.trials_matrix()
    if trials[instance, arm] == 0:
        raise CoverageError(f"cell {table.cell_label(instance, arm)} has no trials")
    m = table_marginals(table)
    return float(m.p_arm_given_type[arm] / m.p_arm_given_instance[instance, arm])


def rectified_value(table: ContingencyTable, arm: ArmId) -> float:
    """Expected rectified reward under the logged mix: sum_n rate(n, pi) p(n | pi) w(pi, n)."""
    trials = table.trials_matrix()
    _require_arm_coverage(table, trials, arm)
    m = table_marginals(table)
    weights = m.p_instance_given_type / m.p_instance_given_arm[arm]
    return float(np.sum(m.success_rate[:, arm] * m.p_instance_given_arm[arm] * weights))


def counts_from_table(table: ContingencyTable) -> CountTable:
    """CountTable holding a table's exact trial counts."""
    counts = CountTable(table.n_instances, table.n_arms, table.type_id)
    trials = table.trials_matrix()
    counts.c_arm_instance = trials.copy()
    counts.c_arm = trials.sum(axis=0)
    counts.c_instance = trials.sum(axis=1)
    counts.total = int(trials.sum())
    return counts
