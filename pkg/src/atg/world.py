"""2-D tracking world: occupancy-grid map, scripted target motion, agent
kinematics, the distance/orientation reward, and episode termination.

World frame: x east, y north. A heading of 0 means facing +y; positive
headings rotate counterclockwise (left). The agent-centric frame has x to
the agent's right and y straight ahead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi


class SpecValidationError(ValueError):
    """An EnvSpec field violates one of its invariants."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


def normalize_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


class Action(IntEnum):
    """The six camera-control actions, in fixed serialization order."""

    TURN_LEFT = 0
    TURN_RIGHT = 1
    TURN_LEFT_MOVE = 2
    TURN_RIGHT_MOVE = 3
    MOVE_FORWARD = 4
    NO_OP = 5


ACTION_NAMES: dict[Action, str] = {
    Action.TURN_LEFT: "turn-left",
    Action.TURN_RIGHT: "turn-right",
    Action.TURN_LEFT_MOVE: "turn-left-and-move-forward",
    Action.TURN_RIGHT_MOVE: "turn-right-and-move-forward",
    Action.MOVE_FORWARD: "move-forward",
    Action.NO_OP: "no-op",
}

ACTION_FROM_NAME: dict[str, Action] = {name: act for act, name in ACTION_NAMES.items()}


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.heading})")
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    def forward(self) -> tuple[float, float]:
        """Unit vector the pose is facing."""
        return -math.sin(self.heading), math.cos(self.heading)

    def right(self) -> tuple[float, float]:
        """Unit vector pointing over the right shoulder."""
        return math.cos(self.heading), math.sin(self.heading)


@dataclass(frozen=True)
class Distractor:
    """A stationary background sprite: pose, palette id, and visibility."""

    x: float
    y: float
    heading: float = 0.0
    appearance: str = "monster-crimson"
    visible: bool = True


@dataclass(frozen=True)
class RewardParams:
    """Parameters of the shaped following reward.

    peak: reward when the target sits exactly `hold_distance` ahead, facing
    the same way; dist_scale converts meters of positional error to reward
    units; turn_penalty is the cost per radian of relative orientation.
    """

    peak: float = 1.0
    dist_scale: float = 1.0
    hold_distance: float = 1.5
    turn_penalty: float = 0.5

    def validate(self) -> None:
        for name in ("peak", "dist_scale", "hold_distance", "turn_penalty"):
            if getattr(self, name) <= 0:
                raise SpecValidationError(name, "must be strictly positive")


@dataclass(frozen=True)
class Kinematics:
    """Per-action motion increments. Turn-and-move actions do both."""

    turn_step: float = math.pi / 12
    move_step: float = 0.3

    def validate(self) -> None:
        if not (0 < self.turn_step <= math.pi / 2):
            raise SpecValidationError("turn_step", "must be in (0, pi/2]")
        if self.move_step <= 0:
            raise SpecValidationError("move_step", "must be strictly positive")


@dataclass(frozen=True)
class TerminationConfig:
    """Episode stops when the reward sum drops below the floor or at max_steps."""

    max_steps: int = 500
    reward_threshold: float = -75.0


@dataclass(frozen=True)
class EnvSpec:
    """Full description of one trackable world.

    walls is an ASCII grid, one string per row ('X' wall, '.' free); row 0 is
    the northernmost row. Cells are squares of cell_size meters, so cell
    (ix, iy) covers x in [ix*s, (ix+1)*s) and y in [iy*s, (iy+1)*s).
    """

    name: str = "custom"
    walls: tuple[str, ...] = ()
    cell_size: float = 1.0
    waypoints: tuple[tuple[float, float], ...] = ()
    direction: str = "clockwise"
    target_speed: float = 0.25
    zigzag_prob: float = 0.0
    zigzag_amplitude: float = 0.0
    capture_radius: float = 0.6
    target_appearance: str = "monster-crimson"
    floor_palette: str = "floor-umber"
    ceiling_palette: str = "ceil-charcoal"
    wall_palette: str = "wall-slate"
    distractors: tuple[Distractor, ...] = ()
    initial_target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    agent_start: Pose = field(default_factory=lambda: Pose(0.0, 0.0, 0.0))
    flip: bool = False

    def validate(self) -> None:
        if len(self.waypoints) < 2:
            raise SpecValidationError("waypoints", "need at least 2 waypoints")
        if self.target_speed <= 0:
            raise SpecValidationError("target_speed", "must be strictly positive")
        if self.capture_radius <= 0:
            raise SpecValidationError("capture_radius", "must be strictly positive")
        if not (0.0 <= self.zigzag_prob <= 1.0):
            raise SpecValidationError("zigzag_prob", "must lie in [0, 1]")
        if self.zigzag_amplitude < 0:
            raise SpecValidationError("zigzag_amplitude", "must be non-negative")
        if self.cell_size <= 0:
            raise SpecValidationError("cell_size", "must be strictly positive")
        if self.direction not in ("clockwise", "counterclockwise"):
            raise SpecValidationError("direction", f"unknown direction {self.direction!r}")
        if not self.walls or any(len(r) != len(self.walls[0]) for r in self.walls):
            raise SpecValidationError("walls", "rows must be non-empty and equal length")
        for r, row in enumerate(self.walls):
            bad = set(row) - {"X", "."}
            if bad:
                raise SpecValidationError("walls", f"row {r} has invalid cells {sorted(bad)}")
        if not is_free(self, self.initial_target[0], self.initial_target[1]):
            raise SpecValidationError("initial_target", "must lie in a free cell")
        if not is_free(self, self.agent_start.x, self.agent_start.y):
            raise SpecValidationError("agent_start", "must lie in a free cell")


@lru_cache(maxsize=256)
def grid_from_rows(walls: tuple[str, ...]) -> np.ndarray:
    """Boolean occupancy indexed [ix, iy], y increasing north."""
    ny = len(walls)
    nx = len(walls[0])
    grid = np.zeros((nx, ny), dtype=bool)
    for r, row in enumerate(walls):
        iy = ny - 1 - r
        for ix, ch in enumerate(row):
            grid[ix, iy] = ch == "X"
    return grid


def wall_grid(spec: EnvSpec) -> np.ndarray:
    return grid_from_rows(spec.walls)


def is_free(spec: EnvSpec, x: float, y: float) -> bool:
    """True when (x, y) lies inside the map and not in a wall cell."""
    grid = wall_grid(spec)
    ix = math.floor(x / spec.cell_size)
    iy = math.floor(y / spec.cell_size)
    if ix < 0 or iy < 0 or ix >= grid.shape[0] or iy >= grid.shape[1]:
        return False
    return not grid[ix, iy]


def nearest_free_cell_center(spec: EnvSpec, x: float, y: float) -> tuple[float, float]:
    """Center of the free cell closest to (x, y), by center distance."""
    grid = wall_grid(spec)
    s = spec.cell_size
    best = None
    best_d2 = math.inf
    for ix in range(grid.shape[0]):
        for iy in range(grid.shape[1]):
            if grid[ix, iy]:
                continue
            cx = (ix + 0.5) * s
            cy = (iy + 0.5) * s
            d2 = (cx - x) ** 2 + (cy - y) ** 2
            if d2 < best_d2:
                best_d2 = d2
                best = (cx, cy)
    if best is None:
        raise SpecValidationError("walls", "map has no free cell")
    return best


@dataclass
class WorldState:
    """Mutable per-episode state. Never share one instance across threads."""

    agent: Pose
    target: Pose
    waypoint_index: int
    step_count: int
    accumulated_reward: float
    spec: EnvSpec
    rng: np.random.Generator


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    terminal: bool
    local: tuple[float, float, float]


def local_coords(agent: Pose, target: Pose) -> tuple[float, float, float]:
    """Target position and relative orientation in the agent frame.

    x is meters to the agent's right, y meters ahead; a is the target's
    heading minus the agent's, wrapped to (-pi, pi].
    """
    dx = target.x - agent.x
    dy = target.y - agent.y
    cos_h = math.cos(agent.heading)
    sin_h = math.sin(agent.heading)
    x = dx * cos_h + dy * sin_h
    y = -dx * sin_h + dy * cos_h
    a = normalize_angle(target.heading - agent.heading)
    return x, y, a


def reward(local: tuple[float, float, float], p: RewardParams) -> float:
    """Shaped following reward, maximal when the target is dead ahead at
    hold_distance with matching heading."""
    x, y, a = local
    return p.peak - (math.hypot(x, y - p.hold_distance) / p.dist_scale + p.turn_penalty * abs(a))


def _step_direction(spec: EnvSpec) -> int:
    return 1 if spec.direction == "clockwise" else -1


def advance_target(state: WorldState) -> Pose:
    """Move the target one step along its waypoint loop, with optional
    perpendicular zig-zag jitter, and advance the waypoint index when the
    current waypoint is captured. Updates and returns the target pose."""
    spec = state.spec
    pos = state.target
    wp = spec.waypoints[state.waypoint_index]
    if math.hypot(wp[0] - pos.x, wp[1] - pos.y) <= spec.capture_radius:
        state.waypoint_index = (state.waypoint_index + _step_direction(spec)) % len(spec.waypoints)
        wp = spec.waypoints[state.waypoint_index]

    dx = wp[0] - pos.x
    dy = wp[1] - pos.y
    dist = math.hypot(dx, dy)

    # one uniform draw per step keeps trajectories seed-stable across zigzag settings
    u = state.rng.random()
    if dist < 1e-12:
        return pos  # degenerate loop (all waypoints here): target holds still

    ux, uy = dx / dist, dy / dist
    move_x = spec.target_speed * ux
    move_y = spec.target_speed * uy
    if u < spec.zigzag_prob and spec.zigzag_amplitude > 0:
        sign = 1.0 if state.rng.random() < 0.5 else -1.0
        jx = -uy * spec.zigzag_amplitude * sign
        jy = ux * spec.zigzag_amplitude * sign
        if is_free(spec, pos.x + move_x + jx, pos.y + move_y + jy):
            move_x += jx
            move_y += jy

    new_x, new_y = pos.x + move_x, pos.y + move_y
    if not is_free(spec, new_x, new_y):
        return pos
    state.target = Pose(new_x, new_y, math.atan2(-move_x, move_y))
    return state.target


def apply_action(agent: Pose, action: Action, kin: Kinematics, spec: EnvSpec) -> Pose:
    """Turn then move. A move that would land in a wall (or off the map) is
    cancelled; the rotation is kept."""
    heading = agent.heading
    if action in (Action.TURN_LEFT, Action.TURN_LEFT_MOVE):
        heading = normalize_angle(heading + kin.turn_step)
    elif action in (Action.TURN_RIGHT, Action.TURN_RIGHT_MOVE):
        heading = normalize_angle(heading - kin.turn_step)

    x, y = agent.x, agent.y
    if action in (Action.MOVE_FORWARD, Action.TURN_LEFT_MOVE, Action.TURN_RIGHT_MOVE):
        fx, fy = -math.sin(heading), math.cos(heading)
        nx = x + kin.move_step * fx
        ny = y + kin.move_step * fy
        if is_free(spec, nx, ny):
            x, y = nx, ny
    return Pose(x, y, heading)


def is_terminal(state: WorldState, term: TerminationConfig) -> bool:
    return state.accumulated_reward < term.reward_threshold or state.step_count >= term.max_steps


def step(
    state: WorldState,
    action: Action,
    p: RewardParams,
    kin: Kinematics,
    term: TerminationConfig,
) -> tuple[WorldState, StepOutcome]:
    """Advance the world by one agent action plus one target move.

    Mutates and returns the same WorldState. Stepping a terminal state is a
    usage error.
    """
    if is_terminal(state, term):
        raise RuntimeError("step() called on a terminal episode")
    state.agent = apply_action(state.agent, action, kin, state.spec)
    advance_target(state)
    local = local_coords(state.agent, state.target)
    r = reward(local, p)
    state.step_count += 1
    state.accumulated_reward += r
    return state, StepOutcome(reward=r, terminal=is_terminal(state, term), local=local)


def spawn_episode(spec: EnvSpec, seed: int | np.random.Generator | None) -> WorldState:
    """Fresh episode state: agent at its start pose, target at its initial
    pose, counters zeroed, rng seeded."""
    spec.validate()
    x0, y0, a0 = spec.initial_target
    return WorldState(
        agent=spec.agent_start,
        target=Pose(x0, y0, a0),
        waypoint_index=0,
        step_count=0,
        accumulated_reward=0.0,
        spec=spec,
        rng=np.random.default_rng(seed),
    )
