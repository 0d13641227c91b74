"""
Experiment orchestration.

Bandit scenarios (kidney, magazine, custom tables) train learners on a logged
or interactive stream and report their arm estimates. Predator-prey scenarios
collect a skewed replay buffer from the training instances, train a selector
on it, and deploy it against the unknown instance over observation windows T.
"""

import logging
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.errors import CoverageError, CtcatError
from app.models.candidates import SuccessMatrix
from app.models.experiment import (
    BANDIT_SCENARIOS,
    ExperimentConfig,
    ReplayBuffer,
    ReportRow,
    ResultsReport,
    SeedRecord,
    SkewReport,
    SkewSpec,
    StreamMode,
)
from app.models.learner import LearnerHyper, LearnerKind
from app.models.scenario import ArmId, ContingencyTable, InstanceId, RecordStream
from app.services.bandit_env import apply_noise, env_step, make_interactive_env, sample_logged_stream
from app.services.candidate_service import (
    CANDIDATE_GOALS,
    TRAINING_INSTANCES,
    UNKNOWN_INSTANCE,
    FullSimSource,
    OutcomeSource,
    SyntheticSource,
    load_success_matrix,
    train_population,
)
from app.services.learners import Learner, make_learner, preferred_arm
from app.services.scenario_service import scenario_service

logger = logging.getLogger(__name__)

BOOST_MASS = 0.35
COUNTER_MASS = 0.02

# Stream tags passed to the seed sequence
_STREAM_TAG = 0
POPULATION_TAG = 7
EVALUATION_TAG = 8


def seed_rng(master_seed: int, *tags: int) -> np.random.Generator:
    """Independent generator per (master seed, seed index, panel, ...) tuple."""
    return np.random.default_rng([master_seed, *tags])


def resolve_master_seed(flag: Optional[int], config: Optional[ExperimentConfig] = None) -> int:
    """--seed flag, then CTCAT_SEED, then the config file, then 0."""
    for candidate in (flag, settings.SEED, config.seed if config is not None else None):
        if candidate is not None:
            return int(candidate)
    return 0


def builtin_skews(
    instance_names: Sequence[str] = TRAINING_INSTANCES,
    arm_names: Sequence[str] = tuple(CANDIDATE_GOALS),
) -> List[SkewSpec]:
    """Uniform plus one preset per non-first arm.

    The favour-t preset puts BOOST_MASS on (second instance, t) and on
    (first instance, first arm), COUNTER_MASS on the two opposite pairs, and
    spreads what is left evenly over the remaining pairs.
    """
    n, a = len(instance_names), len(arm_names)
    if n != 2 or a < 2:
        raise ValueError("builtin skews are defined over two training instances and at least two arms")
    skews = [SkewSpec(
        name="uniform",
        instance_names=list(instance_names),
        arm_names=list(arm_names),
        probabilities=np.full((n, a), 1.0 / (n * a)).tolist(),
        target=arm_names[0],
    )]
    low, high = 0, 1
    for target in range(1, a):
        p = np.zeros((n, a))
        p[high, target] = BOOST_MASS
        p[low, 0] = BOOST_MASS
        p[low, target] = COUNTER_MASS
        p[high, 0] = COUNTER_MASS
        rest = p == 0
        p[rest] = (1.0 - p.sum()) / rest.sum()
        skews.append(SkewSpec(
            name=f"favor-{arm_names[target]}",
            instance_names=list(instance_names),
            arm_names=list(arm_names),
            probabilities=p.tolist(),
            target=arm_names[target],
        ))
    return skews


def resolve_skew(skew: Union[str, SkewSpec], instance_names: Sequence[str], arm_names: Sequence[str]) -> SkewSpec:
    if isinstance(skew, SkewSpec):
        return skew
    presets = {s.name: s for s in builtin_skews(instance_names, arm_names)}
    if skew in presets:
        return presets[skew]
    path = Path(skew)
    if path.suffix == ".json" and path.exists():
        return SkewSpec.model_validate_json(path.read_text())
    raise ValueError(f"unknown skew '{skew}'; presets are {', '.join(presets)}")


def check_coverage(skew: SkewSpec) -> None:
    """Every (instance, arm) pair needs sampling mass for the weights to exist."""
    p = skew.as_array()
    empty_arms = np.flatnonzero(p.sum(axis=0) == 0)
    if empty_arms.size:
        raise CoverageError(f"skew '{skew.name}' puts no mass on arm '{skew.arm_names[empty_arms[0]]}'")
    empty = np.argwhere(p == 0)
    if empty.size:
        i, j = empty[0]
        raise CoverageError(f"skew '{skew.name}' puts no mass on ({skew.instance_names[i]}, {skew.arm_names[j]})")


def validate_skew(matrix: SuccessMatrix, skew: SkewSpec, target: Union[ArmId, str, None] = None) -> SkewReport:
    """Confounded and backdoor arm values a buffer drawn from ``skew`` would teach.

    Raises:
        CoverageError: the skew leaves an arm or a pair without mass
    """
    check_coverage(skew)
    if target is None:
        target = skew.target or skew.arm_names[0]
    target_name = target if isinstance(target, str) else skew.arm_names[target]
    p = skew.as_array()
    rows = [matrix.instance_index(name) for name in skew.instance_names]
    cols = [matrix.arm_index(name) for name in skew.arm_names]
    rates = matrix.as_array()[np.ix_(rows, cols)]

    p_instance_given_arm = p / p.sum(axis=0, keepdims=True)
    confounded = (p_instance_given_arm * rates).sum(axis=0)
    backdoor = p.sum(axis=1) @ rates
    c_arg, b_arg = preferred_arm(confounded), preferred_arm(backdoor)
    return SkewReport(
        skew=skew.name,
        confounded=confounded.tolist(),
        backdoor=backdoor.tolist(),
        confounded_argmax=skew.arm_names[c_arg],
        backdoor_argmax=skew.arm_names[b_arg],
        target=target_name,
        target_is_confounded_argmax=skew.arm_names[c_arg] == target_name,
        backdoor_prefers_first=b_arg == 0,
    )


def collect_buffer(source: OutcomeSource, skew: SkewSpec, size: int, rng: np.random.Generator, seed: int = 0) -> ReplayBuffer:
    """Draw ``size`` (instance, arm) pairs from the skew and an outcome for each.

    Instance ids in the buffer index ``skew.instance_names``.
    """
    p = skew.as_array()
    n_arms = p.shape[1]
    flat = rng.choice(p.size, size=size, p=p.ravel())
    instances = flat // n_arms
    arms = flat % n_arms
    to_source_instance = [source.instance_names.index(name) for name in skew.instance_names]
    to_source_arm = [source.arm_names.index(name) for name in skew.arm_names]
    rewards = np.array(
        [source.outcome(to_source_instance[i], to_source_arm[a], rng) for i, a in zip(instances.tolist(), arms.tolist())],
        dtype=float,
    )
    stream = RecordStream(type_id=0, instances=instances, arms=arms, rewards=rewards)
    return ReplayBuffer(
        stream=stream,
        skew=skew.name,
        seed=seed,
        instance_names=list(skew.instance_names),
        arm_names=list(skew.arm_names),
    )


def train_selector(
    buffer: ReplayBuffer,
    kind: Union[LearnerKind, str],
    hyper: Optional[LearnerHyper] = None,
    epochs: int = 1,
) -> Learner:
    """Fresh learner trained on the buffer records in order."""
    if len(buffer) == 0:
        raise ValueError("cannot train a selector on an empty buffer")
    learner = make_learner(
        kind,
        len(buffer.arm_names),
        hyper,
        n_instances=len(buffer.instance_names),
        arm_names=list(buffer.arm_names),
    )
    return learner.observe_stream(buffer.stream, epochs)


def deploy(
    selector: Learner,
    source: OutcomeSource,
    unknown: InstanceId,
    T: int,
    episodes: int,
    rng: np.random.Generator,
    readout_epsilon: float = 0.0,
) -> Tuple[np.ndarray, float]:
    """Commit to the majority arm over T no-op steps, then play it against ``unknown``.

    Returns per-arm selection proportions and the mean success rate.
    """
    if T < 1:
        raise ValueError("observation window T must be >= 1")
    n_arms = selector.n_arms
    greedy = selector.greedy_arm()
    selections = np.zeros(n_arms, dtype=np.int64)
    wins = 0
    for _ in range(episodes):
        if readout_epsilon > 0:
            explore = rng.random(T) < readout_epsilon
            choices = np.where(explore, rng.integers(n_arms, size=T), greedy)
        else:
            choices = np.full(T, greedy)
        chosen = int(np.argmax(np.bincount(choices, minlength=n_arms)))
        selections[chosen] += 1
        wins += source.outcome(unknown, chosen, rng, noop_steps=T) > 0
    return selections / episodes, wins / episodes


def _load_source(config: ExperimentConfig, master_seed: int) -> OutcomeSource:
    if config.scenario == "predprey-fullsim":
        instances, candidates = train_population(config.grid, config.train, seed_rng(master_seed, POPULATION_TAG))
        return FullSimSource(instances, candidates)
    matrix_file = config.success_matrix_file or settings.SUCCESS_MATRIX_FILE
    return SyntheticSource(load_success_matrix(matrix_file))


def _load_table(config: ExperimentConfig) -> ContingencyTable:
    if config.scenario in BANDIT_SCENARIOS:
        return scenario_service.builtin_scenario(config.scenario)
    return scenario_service.load_contingency_file(config.scenario)


def _run_unit(record: SeedRecord, work: Callable[[], None]) -> SeedRecord:
    try:
        work()
    except (CtcatError, ValueError) as e:
        record.error = f"{type(e).__name__}: {e}"
        logger.error(f"Seed {record.seed} {record.learner} on {record.panel} failed: {record.error}")
    return record


def _failed_seed(seed: int, panel: str, learners: Sequence[LearnerKind], error: Exception) -> List[SeedRecord]:
    """One failed record per learner when a seed's shared stage (stream or buffer) raises."""
    message = f"{type(error).__name__}: {error}"
    logger.error(f"Seed {seed} on {panel} aborted: {message}")
    return [SeedRecord(seed=seed, learner=kind.value, panel=panel, error=message) for kind in learners]


def _interactive_training(learner: Learner, table: ContingencyTable, config: ExperimentConfig, rng: np.random.Generator) -> None:
    env = make_interactive_env(apply_noise(table, config.noise_sigma, rng, config.noise_mode))
    for _ in range(config.stream_length):
        learner.observe(env_step(env, learner.select_arm(rng), rng))


def _run_bandit(config: ExperimentConfig, master_seed: int) -> Tuple[List[SeedRecord], List[str], List[str]]:
    table = _load_table(config)
    panel = config.scenario if config.scenario in BANDIT_SCENARIOS else Path(config.scenario).stem
    records = []
    for seed in range(config.seeds):
        rng = seed_rng(master_seed, seed, 0, _STREAM_TAG)
        try:
            rates = apply_noise(table, config.noise_sigma, rng, config.noise_mode)
            stream = sample_logged_stream(rates, config.stream_length, rng) if config.stream_mode is StreamMode.LOGGED else None
        except (CtcatError, ValueError) as e:
            records.extend(_failed_seed(seed, panel, config.learners, e))
            continue
        for index, kind in enumerate(config.learners):
            record = SeedRecord(seed=seed, learner=kind.value, panel=panel)
            learner_rng = seed_rng(master_seed, seed, 0, index + 1)

            def work(kind=kind, record=record, learner_rng=learner_rng):
                learner = make_learner(kind, table.n_arms, config.hyper, table.n_instances, list(table.arm_names))
                if stream is not None:
                    learner.observe_stream(stream, config.epochs)
                else:
                    _interactive_training(learner, table, config, learner_rng)
                record.estimates = learner.arm_estimates().values
                record.preferred_arm = table.arm_names[learner.greedy_arm()]

            records.append(_run_unit(record, work))
        logger.info(f"Seed {seed + 1}/{config.seeds} of {panel} done")
    return records, [panel], list(table.arm_names)


def _run_predprey(config: ExperimentConfig, master_seed: int) -> Tuple[List[SeedRecord], List[str], List[str]]:
    source = _load_source(config, master_seed)
    arm_names = list(source.arm_names)
    training = [name for name in source.instance_names if name != UNKNOWN_INSTANCE]
    unknown = source.instance_names.index(UNKNOWN_INSTANCE)
    skews = [resolve_skew(s, training, arm_names) for s in config.skews]
    records = []
    for panel_index, skew in enumerate(skews, start=1):
        if list(skew.arm_names) != arm_names:
            raise ValueError(f"skew '{skew.name}' must list the arms {', '.join(arm_names)} in that order")
        check_coverage(skew)
        if isinstance(source, SyntheticSource):
            report = validate_skew(source.matrix, skew)
            logger.info(
                f"Skew {skew.name}: confounded argmax {report.confounded_argmax}, backdoor argmax {report.backdoor_argmax}"
            )
        for seed in range(config.seeds):
            try:
                buffer = collect_buffer(source, skew, config.buffer_size, seed_rng(master_seed, seed, panel_index, _STREAM_TAG), seed)
            except (CtcatError, ValueError) as e:
                records.extend(_failed_seed(seed, skew.name, config.learners, e))
                continue
            for index, kind in enumerate(config.learners):
                record = SeedRecord(seed=seed, learner=kind.value, panel=skew.name)
                rng = seed_rng(master_seed, seed, panel_index, index + 1)

                def work(kind=kind, record=record, rng=rng):
                    selector = train_selector(buffer, kind, config.hyper, config.epochs)
                    record.estimates = selector.arm_estimates().values
                    record.preferred_arm = skew.arm_names[selector.greedy_arm()]
                    for T in config.windows:
                        proportions, success = deploy(
                            selector, source, unknown, T, config.deploy_episodes, rng, config.readout_epsilon
                        )
                        record.selections[T] = proportions.tolist()
                        record.success[T] = success

                records.append(_run_unit(record, work))
            logger.info(f"Seed {seed + 1}/{config.seeds} of {skew.name} done")
    return records, [s.name for s in skews], arm_names


def aggregate(records: Sequence[SeedRecord], arm_names: Sequence[str], learners: Sequence[str], panels: Sequence[str]) -> List[ReportRow]:
    """Fold per-seed records into report rows, ordered by panel, learner, T and arm."""
    rows = []
    for panel in panels:
        for learner in learners:
            done = [r for r in records if r.panel == panel and r.learner == learner and r.error is None]
            if not done:
                continue
            estimates = np.array([r.estimates for r in done], dtype=float)
            mean, std = estimates.mean(axis=0), estimates.std(axis=0)
            if not done[0].selections:
                for j, arm in enumerate(arm_names):
                    proportion = sum(r.preferred_arm == arm for r in done) / len(done)
                    rows.append(ReportRow(learner=learner, arm=arm, panel=panel, mean=mean[j], std=std[j], proportion=proportion))
                continue
            for T in sorted(done[0].selections):
                selections = np.array([r.selections[T] for r in done]).mean(axis=0)
                success = float(np.mean([r.success[T] for r in done]))
                for j, arm in enumerate(arm_names):
                    rows.append(ReportRow(
                        learner=learner, arm=arm, panel=panel, T=T,
                        mean=mean[j], std=std[j], proportion=float(selections[j]), success=success,
                    ))
    return rows


def run_experiment(config: ExperimentConfig, master_seed: Optional[int] = None) -> ResultsReport:
    """Run every seed of an experiment and aggregate.

    A failing (seed, learner, panel) unit is recorded in the report and the
    remaining units still run. A failing stream or buffer draw marks every
    learner of that seed as failed.
    """
    master_seed = resolve_master_seed(master_seed, config)
    logger.info(f"Running {config.scenario} with {config.seeds} seeds, master seed {master_seed}")
    if config.is_predprey:
        records, panels, arm_names = _run_predprey(config, master_seed)
    else:
        records, panels, arm_names = _run_bandit(config, master_seed)
    learners = [kind.value for kind in config.learners]
    report = ResultsReport(
        scenario=config.scenario,
        master_seed=master_seed,
        arm_names=arm_names,
        rows=aggregate(records, arm_names, learners, panels),
        records=records,
        config=config.model_dump(mode="json"),
    )
    if report.errors:
        logger.warning(f"{len(report.errors)} of {len(records)} units failed")
    return report
