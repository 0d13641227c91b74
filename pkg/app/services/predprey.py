"""
Goal-based predator-prey on a toroidal grid.

Two predators, one fenced prey per fence. All moves are proposed from the
pre-step state and resolved together; contested cells go to a stayer, then to
a prey, then to a uniformly drawn predator. Capture needs both predators
4-adjacent to the same prey.
"""

import logging
from collections import defaultdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import TerminalStateError
from app.models.gridworld import (
    ACTION_DELTAS,
    Action,
    EnvState,
    GoalSet,
    GridConfig,
    Observation,
    Position,
    StepResult,
)

logger = logging.getLogger(__name__)

N_PREDATORS = 2


def _free_cells(cfg: GridConfig) -> List[Position]:
    return [
        Position(x, y)
        for y in range(cfg.height)
        for x in range(cfg.width)
        if not cfg.in_any_fence(Position(x, y))
    ]


def reset(cfg: GridConfig, rng: np.random.Generator, goals: Optional[Tuple[GoalSet, GoalSet]] = None) -> EnvState:
    """Place each prey uniformly inside its fence and the predators on distinct cells outside every fence."""
    if goals is None:
        everything = frozenset(range(1, cfg.n_prey + 1))
        goals = (everything, everything)
    preys = []
    for x0, y0 in cfg.fence_corners:
        preys.append(Position(x0 + int(rng.integers(cfg.fence_size)), y0 + int(rng.integers(cfg.fence_size))))
    free = _free_cells(cfg)
    picks = rng.choice(len(free), size=N_PREDATORS, replace=False)
    predators = (free[int(picks[0])], free[int(picks[1])])
    return EnvState(predators=predators, preys=tuple(preys), goals=tuple(goals))


def observe(cfg: GridConfig, state: EnvState, agent: int) -> Observation:
    """What predator ``agent`` sees: itself, its teammate and the closest prey (ties -> lowest index)."""
    if agent not in (0, 1):
        raise ValueError(f"predator index must be 0 or 1, got {agent}")
    own = state.predators[agent]
    distance, index = min((cfg.distance(own, prey), i) for i, prey in enumerate(state.preys, start=1))
    return Observation(
        own=own,
        teammate=state.predators[1 - agent],
        closest_prey=state.preys[index - 1],
        closest_prey_index=index,
        closest_prey_distance=distance,
    )


def is_captured(cfg: GridConfig, state: EnvState, prey: int) -> bool:
    target = state.preys[prey - 1]
    return all(cfg.distance(p, target) == 1 for p in state.predators)


def _move(cfg: GridConfig, pos: Position, action: Action) -> Position:
    dx, dy = ACTION_DELTAS[Action(action)]
    return cfg.wrap(pos.x + dx, pos.y + dy)


def _resolve(current: List[Position], proposed: List[Position], is_prey: List[bool], rng: np.random.Generator) -> List[Position]:
    proposed = list(proposed)
    changed = True
    while changed:
        changed = False
        moving = [i for i in range(len(current)) if proposed[i] != current[i]]
        for a in moving:
            for b in moving:
                if a < b and proposed[a] == current[b] and proposed[b] == current[a]:
                    proposed[a], proposed[b] = current[a], current[b]
                    changed = True
        claims = defaultdict(list)
        for i, cell in enumerate(proposed):
            claims[cell].append(i)
        for cell in sorted(claims):
            members = claims[cell]
            if len(members) < 2:
                continue
            stayers = [i for i in members if proposed[i] == current[i]]
            movers = [i for i in members if proposed[i] != current[i]]
            if stayers:
                winner = None
            else:
                preys = [i for i in movers if is_prey[i]]
                winner = preys[0] if preys else movers[int(rng.integers(len(movers)))]
            for i in movers:
                if i != winner:
                    proposed[i] = current[i]
                    changed = True
    return proposed


def step(cfg: GridConfig, state: EnvState, actions: Tuple[Action, Action], rng: np.random.Generator) -> StepResult:
    """Advance one step.

    Prey draw a uniform move and stay instead when it would leave their fence or
    a predator is 4-adjacent before the step. All credit arrives at termination.

    Raises:
        TerminalStateError: the episode already ended
    """
    if state.terminal:
        raise TerminalStateError("step() called on a terminal state")
    current = list(state.predators) + list(state.preys)
    proposed = [_move(cfg, pos, a) for pos, a in zip(state.predators, actions)]
    prey_moves = rng.integers(len(Action), size=len(state.preys))
    for i, (pos, move) in enumerate(zip(state.preys, prey_moves), start=1):
        target = _move(cfg, pos, Action(int(move)))
        frozen = any(cfg.distance(p, pos) == 1 for p in state.predators)
        proposed.append(pos if frozen or not cfg.in_fence(i, target) else target)
    is_prey = [False] * N_PREDATORS + [True] * len(state.preys)
    final = _resolve(current, proposed, is_prey, rng)

    moved = state._replace(
        predators=(final[0], final[1]),
        preys=tuple(final[N_PREDATORS:]),
        step=state.step + 1,
    )
    for prey in range(1, len(moved.preys) + 1):
        if is_captured(cfg, moved, prey):
            rewards = tuple(1.0 if prey in goals else -1.0 for goals in moved.goals)
            done = moved._replace(terminal=True, capture=(prey, moved.step))
            logger.debug(f"Prey {prey} captured at step {moved.step}, rewards {rewards}")
            return StepResult(done, rewards, True)
    if moved.step >= cfg.max_steps:
        logger.debug(f"Episode hit the {cfg.max_steps}-step limit without a capture")
        return StepResult(moved._replace(terminal=True), (-1.0, -1.0), True)
    return StepResult(moved, (0.0, 0.0), False)


def _cell(pos: Position) -> str:
    return f"{pos.x}:{pos.y}"


def format_trajectory(steps: Sequence[Tuple[EnvState, Tuple[Action, Action], Tuple[float, float]]]) -> str:
    """CSV dump with one line per step: step,pred0,pred1,prey1..preyN,actions,rewards."""
    rows = []
    n_prey = len(steps[0][0].preys) if steps else 4
    for state, actions, rewards in steps:
        row = {"step": state.step, "pred0": _cell(state.predators[0]), "pred1": _cell(state.predators[1])}
        for i, prey in enumerate(state.preys, start=1):
            row[f"prey{i}"] = _cell(prey)
        row["actions"] = "|".join(Action(a).name.lower() for a in actions)
        row["rewards"] = "|".join(f"{r:g}" for r in rewards)
        rows.append(row)
    columns = ["step", "pred0", "pred1"] + [f"prey{i}" for i in range(1, n_prey + 1)] + ["actions", "rewards"]
    return pd.DataFrame(rows, columns=columns).to_csv(index=False, lineterminator="\n")
