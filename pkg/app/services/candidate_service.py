"""
Candidate policies for the predator-prey task.

Each policy pursues one prey out of its goal set and navigates to a free cell
next to it with a tabular Q function trained in self-play. The same policies
serve as teammate instances; pairing them fills a SuccessMatrix, and
``synthetic_outcome`` replaces rollouts with Bernoulli draws from that matrix.
"""

import io
import logging
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConvergenceError, ScenarioError
from app.models.candidates import PairEvaluation, SuccessMatrix, TrainHyper
from app.models.gridworld import ACTION_DELTAS, Action, EnvState, GoalSet, GridConfig, Observation, Position, make_goal_set
from app.models.scenario import ArmId, InstanceId
from app.services import predprey

logger = logging.getLogger(__name__)

INSTANCE_GOALS: Dict[str, Tuple[int, ...]] = {"K1": (1, 4), "K2": (1, 2, 3), "U": (1, 2, 4)}
CANDIDATE_GOALS: Dict[str, Tuple[int, ...]] = {"pi1": (1, 2, 3), "pi2": (2, 3), "pi3": (2,), "pi4": (3,)}
TRAINING_INSTANCES = ("K1", "K2")
UNKNOWN_INSTANCE = "U"

SWITCH_HYSTERESIS = 3
OWN_RANGE = 4
TEAMMATE_RANGE = 2
PRIOR_SCALE = 0.01
MATRIX_COLUMNS = ["instance", "arm", "rate", "spread"]

ADJACENT = ((1, 0), (-1, 0), (0, 1), (0, -1))

ObsKey = Tuple[int, int, int, int]


def _compress(d: int, limit: int) -> int:
    if abs(d) <= limit:
        return d
    return limit + 1 if d > 0 else -(limit + 1)


def _free_distance(own: Tuple[int, int], teammate: Tuple[int, int]) -> int:
    """Manhattan distance from ``own`` to the nearest cell adjacent to the origin not held by the teammate."""
    return min(
        abs(own[0] - cx) + abs(own[1] - cy)
        for cx, cy in ADJACENT
        if (cx, cy) != tuple(teammate)
    )


def choose_target(cfg: GridConfig, goals: GoalSet, obs: Observation, previous: Optional[int] = None) -> int:
    """Goal-set prey whose fence centre is closest to both predators combined.

    The previous target is kept unless another prey is better by more than
    SWITCH_HYSTERESIS. Ties go to the lowest prey index.
    """
    scores = {
        prey: cfg.distance(obs.own, cfg.fence_center(prey)) + cfg.distance(obs.teammate, cfg.fence_center(prey))
        for prey in goals
    }
    best = min(scores, key=lambda prey: (scores[prey], prey))
    if previous in scores and scores[previous] <= scores[best] + SWITCH_HYSTERESIS:
        return previous
    return best


class TabularGoalPolicy:
    """Goal-conditioned tabular Q over a compressed view relative to the target prey."""

    def __init__(self, goals: Iterable[int], cfg: Optional[GridConfig] = None, name: Optional[str] = None):
        self.cfg = cfg or GridConfig()
        self.goals: GoalSet = make_goal_set(goals, self.cfg.n_prey)
        self.name = name or "+".join(str(g) for g in sorted(self.goals))
        self.q: Dict[ObsKey, np.ndarray] = {}
        self.greedy = True

    def __repr__(self) -> str:
        return f"TabularGoalPolicy(name={self.name!r}, goals={sorted(self.goals)}, states={len(self.q)})"

    def choose_target(self, obs: Observation, previous: Optional[int] = None) -> int:
        return choose_target(self.cfg, self.goals, obs, previous)

    def target_point(self, obs: Observation, target: int) -> Position:
        """The prey itself when it is the one in view, its fence centre otherwise."""
        if obs.closest_prey_index == target:
            return obs.closest_prey
        return self.cfg.fence_center(target)

    def _offsets(self, obs: Observation, target: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        point = self.target_point(obs, target)
        return self.cfg.offset(point, obs.own), self.cfg.offset(point, obs.teammate)

    def key(self, obs: Observation, target: int) -> ObsKey:
        (ox, oy), (mx, my) = self._offsets(obs, target)
        return (
            _compress(ox, OWN_RANGE),
            _compress(oy, OWN_RANGE),
            _compress(mx, TEAMMATE_RANGE),
            _compress(my, TEAMMATE_RANGE),
        )

    def potential(self, obs: Observation, target: int) -> float:
        """Negative distance to the nearest free capture cell."""
        own, teammate = self._offsets(obs, target)
        return -float(_free_distance(own, teammate))

    def values(self, key: ObsKey) -> np.ndarray:
        """Action values of a key, initialized from the free-cell distance after each move."""
        row = self.q.get(key)
        if row is None:
            row = self._prior(key)
            self.q[key] = row
        return row

    @staticmethod
    def _prior(key: ObsKey) -> np.ndarray:
        ox, oy, mx, my = key
        prior = np.empty(len(Action), dtype=float)
        for action in Action:
            dx, dy = ACTION_DELTAS[action]
            nxt = (ox + dx, oy + dy)
            if nxt == (0, 0) or nxt == (mx, my):
                nxt = (ox, oy)
            prior[action] = -PRIOR_SCALE * _free_distance(nxt, (mx, my))
        return prior

    def select(self, key: ObsKey, rng: Optional[np.random.Generator] = None, epsilon: float = 0.0) -> Action:
        if not self.greedy and rng is not None and epsilon > 0 and rng.random() < epsilon:
            return Action(int(rng.integers(len(Action))))
        return Action(int(np.argmax(self.values(key))))

    def act(
        self,
        obs: Observation,
        previous_target: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        epsilon: float = 0.0,
    ) -> Tuple[Action, int]:
        """Pick an action; returns it with the target it was chosen for."""
        target = self.choose_target(obs, previous_target)
        return self.select(self.key(obs, target), rng, epsilon), target


class EpisodeResult(NamedTuple):
    rewards: Tuple[float, float]
    steps: int
    capture: Optional[Tuple[int, int]]
    trajectory: Optional[List[Tuple[EnvState, Tuple[Action, Action], Tuple[float, float]]]]

    @property
    def success(self) -> bool:
        return self.rewards[0] > 0


def run_episode(
    cfg: GridConfig,
    controlled: TabularGoalPolicy,
    teammate: TabularGoalPolicy,
    rng: np.random.Generator,
    noop_steps: int = 0,
    record: bool = False,
) -> EpisodeResult:
    """Roll out one greedy episode with ``controlled`` as predator 0.

    Predator 0 stays put for the first ``noop_steps`` steps.
    """
    state = predprey.reset(cfg, rng, (controlled.goals, teammate.goals))
    policies = (controlled, teammate)
    targets: List[Optional[int]] = [None, None]
    trajectory = [] if record else None
    while True:
        actions = []
        for k, policy in enumerate(policies):
            action, targets[k] = policy.act(predprey.observe(cfg, state, k), targets[k])
            actions.append(action)
        if state.step < noop_steps:
            actions[0] = Action.STAY
        result = predprey.step(cfg, state, (actions[0], actions[1]), rng)
        state = result.state
        if record:
            trajectory.append((state, (actions[0], actions[1]), result.rewards))
        if result.terminal:
            return EpisodeResult(result.rewards, state.step, state.capture, trajectory)


def _self_play_rate(cfg: GridConfig, policy: TabularGoalPolicy, episodes: int, rng: np.random.Generator) -> float:
    wins = sum(run_episode(cfg, policy, policy, rng).success for _ in range(episodes))
    return wins / episodes


def train_candidate(
    cfg: GridConfig,
    goal: Iterable[int],
    hyper: Optional[TrainHyper] = None,
    rng: Optional[np.random.Generator] = None,
    name: Optional[str] = None,
) -> TabularGoalPolicy:
    """Train a goal-conditioned policy in self-play; both predators share one table.

    The training signal is the terminal reward plus the difference of the
    free-cell potential between consecutive steps.

    Raises:
        ConvergenceError: greedy self-play success stays below hyper.success_floor
    """
    hyper = hyper or TrainHyper()
    rng = rng if rng is not None else np.random.default_rng(0)
    policy = TabularGoalPolicy(goal, cfg, name)
    policy.greedy = False
    alpha, gamma, scale = hyper.learning_rate, hyper.discount, hyper.shaping

    for episode in range(hyper.episodes):
        epsilon = hyper.epsilon(episode)
        state = predprey.reset(cfg, rng, (policy.goals, policy.goals))
        obs = [predprey.observe(cfg, state, k) for k in (0, 1)]
        targets = [policy.choose_target(o) for o in obs]
        keys = [policy.key(o, t) for o, t in zip(obs, targets)]
        while True:
            actions = [policy.select(key, rng, epsilon) for key in keys]
            phis = [scale * policy.potential(o, t) for o, t in zip(obs, targets)]
            result = predprey.step(cfg, state, (actions[0], actions[1]), rng)
            state = result.state
            if result.terminal:
                for k in (0, 1):
                    row = policy.values(keys[k])
                    row[actions[k]] += alpha * (result.rewards[k] - phis[k] - row[actions[k]])
                break
            obs = [predprey.observe(cfg, state, k) for k in (0, 1)]
            targets = [policy.choose_target(o, t) for o, t in zip(obs, targets)]
            next_keys = [policy.key(o, t) for o, t in zip(obs, targets)]
            for k in (0, 1):
                shaped = result.rewards[k] + scale * policy.potential(obs[k], targets[k]) - phis[k]
                row = policy.values(keys[k])
                td = shaped + gamma * float(policy.values(next_keys[k]).max())
                row[actions[k]] += alpha * (td - row[actions[k]])
            keys = next_keys

    policy.greedy = True
    rate = _self_play_rate(cfg, policy, hyper.eval_episodes, rng)
    if rate < hyper.success_floor:
        raise ConvergenceError(
            f"policy {policy.name} reached self-play success {rate:.2f} below floor {hyper.success_floor:.2f}",
            success_rate=rate,
        )
    logger.info(f"Trained {policy.name}: {len(policy.q)} states, self-play success {rate:.2f}")
    return policy


def train_population(
    cfg: GridConfig,
    hyper: Optional[TrainHyper] = None,
    rng: Optional[np.random.Generator] = None,
    instance_goals: Dict[str, Sequence[int]] = INSTANCE_GOALS,
    candidate_goals: Dict[str, Sequence[int]] = CANDIDATE_GOALS,
) -> Tuple[List[TabularGoalPolicy], List[TabularGoalPolicy]]:
    """Train every teammate instance and candidate policy, in dictionary order."""
    rng = rng if rng is not None else np.random.default_rng(0)
    instances = [train_candidate(cfg, goals, hyper, rng, name) for name, goals in instance_goals.items()]
    candidates = [train_candidate(cfg, goals, hyper, rng, name) for name, goals in candidate_goals.items()]
    return instances, candidates


def evaluate_pair(
    instance_policy: TabularGoalPolicy,
    candidate_policy: TabularGoalPolicy,
    episodes: int,
    rng: np.random.Generator,
    runs: int = 10,
    noop_steps: int = 0,
) -> PairEvaluation:
    """Success rate of ``candidate_policy`` (predator 0) teamed with ``instance_policy``.

    Success is an episode where the candidate earns +1. The rate is the mean
    over ``runs`` independent runs of ``episodes`` each; spread is their std.
    """
    cfg = candidate_policy.cfg
    per_run = []
    steps = []
    for _ in range(runs):
        wins = 0
        for _ in range(episodes):
            result = run_episode(cfg, candidate_policy, instance_policy, rng, noop_steps=noop_steps)
            wins += result.success
            steps.append(result.steps)
        per_run.append(wins / episodes)
    return PairEvaluation(
        instance=instance_policy.name,
        arm=candidate_policy.name,
        rate=float(np.mean(per_run)),
        spread=float(np.std(per_run)),
        runs=per_run,
        mean_steps=float(np.mean(steps)),
    )


def success_matrix(
    instances: Sequence[TabularGoalPolicy],
    candidates: Sequence[TabularGoalPolicy],
    episodes: int,
    rng: np.random.Generator,
    runs: int = 10,
) -> SuccessMatrix:
    rates = []
    spreads = []
    for instance in instances:
        row = [evaluate_pair(instance, candidate, episodes, rng, runs) for candidate in candidates]
        rates.append([e.rate for e in row])
        spreads.append([e.spread for e in row])
        logger.info(f"Evaluated {instance.name}: " + ", ".join(f"{e.arm}={e.rate:.2f}" for e in row))
    matrix = SuccessMatrix(
        instance_names=[p.name for p in instances],
        arm_names=[p.name for p in candidates],
        rates=rates,
        spreads=spreads,
    )
    if not matrix.best_response_shared(0):
        logger.warning(f"{matrix.arm_names[0]} is not the best response for every instance: argmax {matrix.row_argmax()}")
    return matrix


def synthetic_outcome(matrix: SuccessMatrix, instance: InstanceId, arm: ArmId, rng: np.random.Generator) -> float:
    """+1 with probability rate(instance, arm), else -1."""
    return 1.0 if rng.random() < matrix.rate(instance, arm) else -1.0


def load_success_matrix(source: Union[str, Path, io.StringIO, None] = None) -> SuccessMatrix:
    """Read a success matrix CSV (``instance,arm,rate[,spread]``); defaults to the bundled one.

    Raises:
        ScenarioError: missing columns, missing cells or rates outside [0, 1]
    """
    if source is None:
        source = settings.DATA_DIR / "success_matrix.csv"
    try:
        frame = pd.read_csv(source, comment="#", skipinitialspace=True, dtype={"instance": str, "arm": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ScenarioError(f"Failed to read success matrix: {e}")
    missing = [c for c in MATRIX_COLUMNS[:3] if c not in frame.columns]
    if missing:
        raise ScenarioError(f"success matrix is missing columns: {', '.join(missing)}")

    instance_names = list(pd.unique(frame["instance"]))
    arm_names = list(pd.unique(frame["arm"]))
    if frame.duplicated(["instance", "arm"]).any():
        raise ScenarioError("success matrix lists a cell twice")
    if len(frame) != len(instance_names) * len(arm_names):
        raise ScenarioError("success matrix must list every (instance, arm) pair")
    indexed = frame.set_index(["instance", "arm"])
    rates = [[float(indexed.loc[(i, a), "rate"]) for a in arm_names] for i in instance_names]
    spreads = None
    if "spread" in frame.columns:
        spreads = [
            [None if pd.isna(indexed.loc[(i, a), "spread"]) else float(indexed.loc[(i, a), "spread"]) for a in arm_names]
            for i in instance_names
        ]
    try:
        return SuccessMatrix(instance_names=instance_names, arm_names=arm_names, rates=rates, spreads=spreads)
    except ValidationError as e:
        raise ScenarioError(e.errors()[0]["msg"].removeprefix("Value error, "))


def dump_success_matrix(matrix: SuccessMatrix) -> str:
    rows = []
    for i, instance in enumerate(matrix.instance_names):
        for j, arm in enumerate(matrix.arm_names):
            spread = matrix.spreads[i][j] if matrix.spreads is not None else None
            rows.append({"instance": instance, "arm": arm, "rate": matrix.rates[i][j], "spread": spread})
    frame = pd.DataFrame(rows, columns=MATRIX_COLUMNS)
    return frame.to_csv(index=False, float_format="%.6f", lineterminator="\n")


class SyntheticSource:
    """Outcomes drawn from a success matrix."""

    mode = "synthetic"

    def __init__(self, matrix: SuccessMatrix):
        self.matrix = matrix
        self.instance_names = matrix.instance_names
        self.arm_names = matrix.arm_names

    def outcome(self, instance: InstanceId, arm: ArmId, rng: np.random.Generator, noop_steps: int = 0) -> float:
        return synthetic_outcome(self.matrix, instance, arm, rng)


class FullSimSource:
    """Outcomes from predator-prey rollouts of trained policies."""

    mode = "fullsim"

    def __init__(self, instances: Sequence[TabularGoalPolicy], candidates: Sequence[TabularGoalPolicy]):
        self.instances = list(instances)
        self.candidates = list(candidates)
        self.instance_names = [p.name for p in self.instances]
        self.arm_names = [p.name for p in self.candidates]

    def outcome(self, instance: InstanceId, arm: ArmId, rng: np.random.Generator, noop_steps: int = 0) -> float:
        candidate = self.candidates[arm]
        result = run_episode(candidate.cfg, candidate, self.instances[instance], rng, noop_steps=noop_steps)
        return 1.0 if result.success else -1.0


OutcomeSource = Union[SyntheticSource, FullSimSource]
