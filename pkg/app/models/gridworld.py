from enum import IntEnum
from typing import FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Action(IntEnum):
    STAY = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4


# (dx, dy); y grows downwards
ACTION_DELTAS = {
    Action.STAY: (0, 0),
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
}

# Prey indices are 1-based throughout the public API.
GoalSet = FrozenSet[int]


def make_goal_set(preys: Iterable[int], n_prey: int = 4) -> GoalSet:
    goals = frozenset(int(p) for p in preys)
    if not goals:
        raise ValueError("a goal set must name at least one prey")
    if not goals <= set(range(1, n_prey + 1)):
        raise ValueError(f"goal set {sorted(goals)} must be a subset of 1..{n_prey}")
    return goals


class Position(NamedTuple):
    x: int
    y: int


class GridConfig(BaseModel):
    """Toroidal grid with one fenced prey per fence."""
    model_config = ConfigDict(frozen=True)

    width: int = Field(default=20, ge=5)
    height: int = Field(default=20, ge=5)
    fence_size: int = Field(default=4, ge=1)
    fence_corners: List[Tuple[int, int]] = Field(
        default=[(2, 2), (14, 2), (2, 14), (14, 14)],
        min_length=1,
        max_length=4,
        description="Top-left (x, y) of each fence in reading order; fence i holds prey i",
    )
    max_steps: int = Field(default=300, ge=1)

    @model_validator(mode="after")
    def _check_fences(self) -> "GridConfig":
        cells = set()
        for i, (x0, y0) in enumerate(self.fence_corners, start=1):
            if x0 < 0 or y0 < 0 or x0 + self.fence_size > self.width or y0 + self.fence_size > self.height:
                raise ValueError(f"fence {i} at ({x0}, {y0}) does not fit inside the grid")
            fence = {(x, y) for x in range(x0, x0 + self.fence_size) for y in range(y0, y0 + self.fence_size)}
            if fence & cells:
                raise ValueError(f"fence {i} overlaps another fence")
            cells |= fence
        if len(cells) >= self.width * self.height - 1:
            raise ValueError("fences leave no room for the predators")
        return self

    @property
    def n_prey(self) -> int:
        return len(self.fence_corners)

    def in_fence(self, prey: int, pos: Position) -> bool:
        x0, y0 = self.fence_corners[prey - 1]
        return x0 <= pos.x < x0 + self.fence_size and y0 <= pos.y < y0 + self.fence_size

    def in_any_fence(self, pos: Position) -> bool:
        return any(self.in_fence(i, pos) for i in range(1, self.n_prey + 1))

    def fence_center(self, prey: int) -> Position:
        x0, y0 = self.fence_corners[prey - 1]
        return Position(x0 + self.fence_size // 2, y0 + self.fence_size // 2)

    def wrap(self, x: int, y: int) -> Position:
        return Position(x % self.width, y % self.height)

    def offset(self, a: Position, b: Position) -> Tuple[int, int]:
        """Shortest wrapped (dx, dy) taking a to b, each in [-size/2, size/2)."""
        dx = (b.x - a.x + self.width // 2) % self.width - self.width // 2
        dy = (b.y - a.y + self.height // 2) % self.height - self.height // 2
        return dx, dy

    def distance(self, a: Position, b: Position) -> int:
        """Toroidal Manhattan distance."""
        dx, dy = self.offset(a, b)
        return abs(dx) + abs(dy)


class EnvState(NamedTuple):
    """Immutable snapshot of one predator-prey episode."""

    predators: Tuple[Position, Position]
    preys: Tuple[Position, ...]
    goals: Tuple[GoalSet, GoalSet]
    step: int = 0
    terminal: bool = False
    capture: Optional[Tuple[int, int]] = None  # (prey index, step)


class Observation(NamedTuple):
    own: Position
    teammate: Position
    closest_prey: Position
    closest_prey_index: int
    closest_prey_distance: int


class StepResult(NamedTuple):
    state: EnvState
    rewards: Tuple[float, float]
    terminal: bool
