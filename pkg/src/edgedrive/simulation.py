"""Deterministic 2-D straight-road driving world.

The ego vehicle drives along x with a lateral offset y measured from the
lane centre; positive y is to the right.  Obstacles move longitudinally
only.  All randomness flows through a single seeded generator carried by
the world state, so an episode is fully reproduced by (config, seed,
action sequence).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, UsageError


class WeatherKind(Enum):
    CLEAR = "clear"
    FOG = "fog"
    RAIN = "rain"
    SNOW = "snow"


class Action(Enum):
    """Discrete control actions, in the fixed order used by the agent."""

    STEER_LEFT = 0
    STEER_RIGHT = 1
    MAINTAIN = 2
    ACCELERATE = 3
    BRAKE = 4


@dataclass(frozen=True)
class WeatherCondition:
    """Weather kind plus a severity in [0, 1].  Clear weather forces intensity 0."""

    kind: WeatherKind
    intensity: float = 1.0

    def __post_init__(self):
        if self.kind is WeatherKind.CLEAR:
            object.__setattr__(self, "intensity", 0.0)
        if not 0.0 <= self.intensity <= 1.0:
            raise ConfigurationError(
                f"weather.intensity must lie in [0, 1], got {self.intensity}"
            )


CLEAR = WeatherCondition(WeatherKind.CLEAR)


@dataclass(frozen=True)
class VehicleState:
    """Point-mass ego state: longitudinal position, lateral offset, speed, heading."""

    x: float
    y: float
    v: float
    heading: float = 0.0

    def __post_init__(self):
        if self.v < 0.0:
            raise ConfigurationError(f"vehicle.v must be >= 0, got {self.v}")
        if abs(self.heading) > math.pi:
            raise ConfigurationError(
                f"vehicle.heading must satisfy |heading| <= pi, got {self.heading}"
            )


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned square obstacle moving along x at constant speed."""

    id: int
    x: float
    y: float
    vx: float
    half_extent: float

    def __post_init__(self):
        if self.half_extent <= 0.0:
            raise ConfigurationError(
                f"obstacle.half_extent must be > 0, got {self.half_extent}"
            )


@dataclass(frozen=True)
class StepOutcome:
    """Per-tick safety flags; collided implies done."""

    collided: bool
    lane_departed: bool
    progressed_m: float
    done: bool


@dataclass(frozen=True)
class EpisodeConfig:
    """Scenario parameters for one episode.

    Obstacles spawn ahead of the ego inside [spawn_x_min, spawn_x_max] with
    lateral position in [spawn_y_min, spawn_y_max].  With respawn enabled an
    obstacle that falls respawn_behind_m behind the ego teleports back to the
    far edge of the spawn window, keeping a rolling hazard field.

    The stock scenario is oncoming lane-blocking traffic: wide obstacles
    approach head-on down the lane centre, and the speed floor v_min keeps
    the ego moving, so survival requires swerving around each obstacle in
    time rather than stopping to wait.
    """

    dt: float = 0.1
    max_ticks: int = 600
    lane_half_width: float = 1.75
    v0: float = 12.0
    v_min: float = 8.0
    v_max: float = 20.0
    accel: float = 2.5
    brake_decel: float = 4.0
    lateral_rate: float = 2.5
    ego_half_len: float = 1.5
    ego_half_wid: float = 0.7
    n_obstacles: int = 3
    spawn_x_min: float = 40.0
    spawn_x_max: float = 160.0
    spawn_y_min: float = 0.0
    spawn_y_max: float = 0.0
    obstacle_speed_min: float = -6.0
    obstacle_speed_max: float = -3.0
    obstacle_half_extent: float = 1.2
    respawn: bool = True
    respawn_behind_m: float = 10.0
    weather: WeatherCondition = CLEAR

    def validate(self) -> None:
        if self.dt <= 0.0:
            raise ConfigurationError(f"scenario.dt must be > 0, got {self.dt}")
        if self.max_ticks < 1:
            raise ConfigurationError(
                f"scenario.max_ticks must be >= 1, got {self.max_ticks}"
            )
        if self.lane_half_width <= 0.0:
            raise ConfigurationError(
                f"scenario.lane_half_width must be > 0, got {self.lane_half_width}"
            )
        if self.n_obstacles < 0:
            raise ConfigurationError(
                f"scenario.n_obstacles must be >= 0, got {self.n_obstacles}"
            )
        if self.v_max <= 0.0:
            raise ConfigurationError(f"scenario.v_max must be > 0, got {self.v_max}")
        if not 0.0 <= self.v_min <= self.v_max:
            raise ConfigurationError(
                f"scenario.v_min must lie in [0, v_max], got {self.v_min}"
            )
        if not self.v_min <= self.v0 <= self.v_max:
            raise ConfigurationError(
                f"scenario.v0 must lie in [v_min, v_max], got {self.v0}"
            )
        if self.accel < 0.0 or self.brake_decel < 0.0 or self.lateral_rate < 0.0:
            raise ConfigurationError("scenario rates (accel, brake_decel, lateral_rate) must be >= 0")
        if self.ego_half_len <= 0.0 or self.ego_half_wid <= 0.0:
            raise ConfigurationError("scenario ego half extents must be > 0")
        if self.spawn_x_max < self.spawn_x_min:
            raise ConfigurationError("scenario.spawn_x_max must be >= spawn_x_min")
        if self.spawn_y_max < self.spawn_y_min:
            raise ConfigurationError("scenario.spawn_y_max must be >= spawn_y_min")
        if self.obstacle_speed_max < self.obstacle_speed_min:
            raise ConfigurationError(
                "scenario.obstacle_speed_max must be >= obstacle_speed_min"
            )
        if self.obstacle_half_extent <= 0.0:
            raise ConfigurationError(
                f"scenario.obstacle_half_extent must be > 0, got {self.obstacle_half_extent}"
            )


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of one episode tick.

    The generator field is the episode's single randomness source; it is
    shared (and advanced) across the snapshots of one episode and is
    excluded from equality.
    """

    tick: int
    time_s: float
    ego: VehicleState
    obstacles: Tuple[Obstacle, ...]
    weather: WeatherCondition
    lane_half_width: float
    config: EpisodeConfig
    done: bool = False
    rng: np.random.Generator = field(compare=False, repr=False, default=None)

    def rng_state(self) -> dict:
        """Snapshot of the underlying bit-generator state (for determinism checks)."""
        return self.rng.bit_generator.state


def derive_seed(master: int, *key: int) -> int:
    """Stable per-stream seed derived from a master seed and an integer key path."""
    words = np.random.SeedSequence([int(master), *[int(k) for k in key]]).generate_state(2)
    return int(words[0]) << 32 | int(words[1])


def spawn_scenario(config: EpisodeConfig, seed: int) -> WorldState:
    """Create the reproducible initial world for (config, seed)."""
    config.validate()
    rng = np.random.default_rng(seed)
    obstacles = []
    for i in range(config.n_obstacles):
        obstacles.append(
            Obstacle(
                id=i,
                x=rng.uniform(config.spawn_x_min, config.spawn_x_max),
                y=rng.uniform(config.spawn_y_min, config.spawn_y_max),
                vx=rng.uniform(config.obstacle_speed_min, config.obstacle_speed_max),
                half_extent=config.obstacle_half_extent,
            )
        )
    ego = VehicleState(x=0.0, y=0.0, v=config.v0, heading=0.0)
    return WorldState(
        tick=0,
        time_s=0.0,
        ego=ego,
        obstacles=tuple(obstacles),
        weather=config.weather,
        lane_half_width=config.lane_half_width,
        config=config,
        done=False,
        rng=rng,
    )


def detect_collision(
    ego: VehicleState,
    obstacles: Sequence[Obstacle],
    ego_half_len: float = 1.5,
    ego_half_wid: float = 0.7,
) -> bool:
    """True iff any obstacle footprint overlaps the ego footprint (boundary touching counts)."""
    for obs in obstacles:
        if (
            abs(obs.x - ego.x) <= obs.half_extent + ego_half_len
            and abs(obs.y - ego.y) <= obs.half_extent + ego_half_wid
        ):
            return True
    return False


def detect_lane_departure(ego: VehicleState, lane_half_width: float) -> bool:
    """True iff the ego centre is strictly outside the lane (boundary is in-lane)."""
    if lane_half_width <= 0.0:
        raise ConfigurationError(
            f"lane_half_width must be > 0, got {lane_half_width}"
        )
    return abs(ego.y) > lane_half_width


def _advance_obstacles(
    obstacles: Tuple[Obstacle, ...],
    ego_x: float,
    dt: float,
    config: EpisodeConfig,
    rng: np.random.Generator,
) -> Tuple[Obstacle, ...]:
    moved = []
    for obs in obstacles:
        new_x = obs.x + obs.vx * dt
        if config.respawn and new_x < ego_x - config.respawn_behind_m:
            # Passed obstacle re-enters at the far edge of the spawn window.
            moved.append(
                Obstacle(
                    id=obs.id,
                    x=ego_x + config.spawn_x_max,
                    y=rng.uniform(config.spawn_y_min, config.spawn_y_max),
                    vx=rng.uniform(
                        config.obstacle_speed_min, config.obstacle_speed_max
                    ),
                    half_extent=obs.half_extent,
                )
            )
        else:
            moved.append(replace(obs, x=new_x))
    return tuple(moved)


def step_world(
    state: WorldState, action: Action, dt: Optional[float] = None
) -> Tuple[WorldState, StepOutcome]:
    """Advance the world one tick under `action`.

    Position advances with the pre-update speed, so progressed_m == v * dt
    exactly; speed then updates from the action and clamps to
    [v_min, v_max].  Safety flags are computed from the new state.
    """
    if state.done:
        raise UsageError("cannot step a finished episode")
    cfg = state.config
    if dt is None:
        dt = cfg.dt
    if dt <= 0.0:
        raise UsageError(f"dt must be > 0, got {dt}")

    ego = state.ego
    progressed = ego.v * dt
    new_x = ego.x + progressed

    if action is Action.STEER_RIGHT:
        new_y = ego.y + cfg.lateral_rate * dt
    elif action is Action.STEER_LEFT:
        new_y = ego.y - cfg.lateral_rate * dt
    else:
        new_y = ego.y

    if action is Action.ACCELERATE:
        new_v = ego.v + cfg.accel * dt
    elif action is Action.BRAKE:
        new_v = ego.v - cfg.brake_decel * dt
    else:
        new_v = ego.v
    new_v = min(max(new_v, cfg.v_min), cfg.v_max)

    new_ego = VehicleState(x=new_x, y=new_y, v=new_v, heading=ego.heading)
    obstacles = _advance_obstacles(state.obstacles, new_x, dt, cfg, state.rng)

    tick = state.tick + 1
    collided = detect_collision(new_ego, obstacles, cfg.ego_half_len, cfg.ego_half_wid)
    lane_departed = detect_lane_departure(new_ego, state.lane_half_width)
    done = collided or tick >= cfg.max_ticks

    outcome = StepOutcome(
        collided=collided,
        lane_departed=lane_departed,
        progressed_m=progressed,
        done=done,
    )
    new_state = WorldState(
        tick=tick,
        time_s=tick * dt,
        ego=new_ego,
        obstacles=obstacles,
        weather=state.weather,
        lane_half_width=state.lane_half_width,
        config=cfg,
        done=done,
        rng=state.rng,
    )
    return new_state, outcome
