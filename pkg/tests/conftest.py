import math

import pytest

from atg.world import Distractor, EnvSpec, Pose


def open_room_walls(size: int = 10) -> tuple[str, ...]:
    full = "X" * size
    mid = "X" + "." * (size - 2) + "X"
    return (full,) + (mid,) * (size - 2) + (full,)


def make_room_spec(**overrides) -> EnvSpec:
    """A 10x10 open room with a small square waypoint loop."""
    base = dict(
        name="test-room",
        walls=open_room_walls(10),
        cell_size=1.0,
        waypoints=((3.0, 7.0), (7.0, 7.0), (7.0, 3.0), (3.0, 3.0)),
        direction="clockwise",
        target_speed=0.25,
        zigzag_prob=0.0,
        zigzag_amplitude=0.0,
        capture_radius=0.6,
        initial_target=(3.0, 7.0, -math.pi / 2),
        agent_start=Pose(1.8, 7.0, -math.pi / 2),
    )
    base.update(overrides)
    return EnvSpec(**base)


def stationary_spec(distance: float = 1.5, **overrides) -> EnvSpec:
    """Agent facing a target that never moves, `distance` meters ahead."""
    base = dict(
        name="test-stationary",
        walls=open_room_walls(10),
        waypoints=((5.0, 5.0 + distance), (5.0, 5.0 + distance)),
        initial_target=(5.0, 5.0 + distance, 0.0),
        agent_start=Pose(5.0, 5.0, 0.0),
    )
    base.update(overrides)
    return make_room_spec(**base)


@pytest.fixture
def room_spec() -> EnvSpec:
    return make_room_spec()


@pytest.fixture
def noise_spec() -> EnvSpec:
    return make_room_spec(
        distractors=(Distractor(5.0, 5.0, 0.0, "monster-crimson", True),),
    )
