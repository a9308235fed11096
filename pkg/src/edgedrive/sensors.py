"""Weather-conditioned sensor models.

Each sensor is a spec: a base noise variance, a maximum range, and two
per-weather tables.  Variance multipliers scale noise up as conditions
worsen (further scaled by storm intensity); range multipliers shrink the
usable range.  Readings target the nearest obstacle ahead of the ego
vehicle and degrade to an explicit invalid measurement when that target
falls outside the effective range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, DomainError
from .perception import GridGeometry, OccupancyGrid, grid_for, occupancy_truth
from .simulation import Obstacle, WeatherCondition, WeatherKind, WorldState


class SensorKind(Enum):
    CAMERA = "camera"
    LIDAR = "lidar"
    RADAR = "radar"


@dataclass(frozen=True)
class SensorSpec:
    """Noise and range behaviour of one sensor across weather conditions.

    weather_variance_multiplier maps each weather kind to a factor >= 1
    applied to base_variance; weather_range_multiplier maps each kind to
    a factor in (0, 1] applied to max_range.  Clear weather must map to
    exactly 1 in both tables (it is the reference condition).
    """

    kind: SensorKind
    base_variance: float
    max_range: float
    weather_variance_multiplier: Dict[WeatherKind, float]
    weather_range_multiplier: Dict[WeatherKind, float]
    intensity_slope: float = 0.5

    def __post_init__(self):
        if self.base_variance < 0.0:
            raise ConfigurationError(
                f"base_variance must be non-negative, got {self.base_variance}"
            )
        if self.max_range <= 0.0:
            raise ConfigurationError(
                f"max_range must be positive, got {self.max_range}"
            )
        if self.intensity_slope < 0.0:
            raise ConfigurationError(
                f"intensity_slope must be non-negative, got {self.intensity_slope}"
            )
        for table, name in (
            (self.weather_variance_multiplier, "variance"),
            (self.weather_range_multiplier, "range"),
        ):
            missing = [k for k in WeatherKind if k not in table]
            if missing:
                raise ConfigurationError(
                    f"{name} multiplier table is missing {missing[0].value}"
                )
        if self.weather_variance_multiplier[WeatherKind.CLEAR] != 1.0:
            raise ConfigurationError("clear-weather variance multiplier must be 1")
        if self.weather_range_multiplier[WeatherKind.CLEAR] != 1.0:
            raise ConfigurationError("clear-weather range multiplier must be 1")
        for kind, mult in self.weather_variance_multiplier.items():
            if mult < 1.0:
                raise ConfigurationError(
                    f"variance multiplier for {kind.value} must be >= 1, got {mult}"
                )
        for kind, mult in self.weather_range_multiplier.items():
            if not 0.0 < mult <= 1.0:
                raise ConfigurationError(
                    f"range multiplier for {kind.value} must be in (0, 1], got {mult}"
                )


def noise_variance_for(spec: SensorSpec, weather: WeatherCondition) -> float:
    """Effective noise variance under the given conditions.

    variance = base * kind_multiplier * (1 + slope * intensity); clear
    weather has intensity 0, so it always returns the base variance.
    """
    mult = spec.weather_variance_multiplier[weather.kind]
    return spec.base_variance * mult * (1.0 + spec.intensity_slope * weather.intensity)


def degrade_range(spec: SensorSpec, weather: WeatherCondition) -> float:
    """Usable range under the given conditions: max_range * kind multiplier."""
    return spec.max_range * spec.weather_range_multiplier[weather.kind]


@dataclass(frozen=True)
class Measurement:
    """One sensor reading.  Invalid readings carry NaN values."""

    sensor: SensorKind
    tick: int
    values: np.ndarray
    variance: float
    valid: bool

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=float).reshape(-1)
        )
        if self.variance < 0.0:
            raise DomainError(f"variance must be non-negative, got {self.variance}")
        if self.valid and not np.isfinite(self.values).all():
            raise DomainError("a valid measurement cannot carry non-finite values")


def nearest_obstacle_ahead(world: WorldState) -> Optional[Tuple[Obstacle, float]]:
    """Closest obstacle at or beyond the ego x position, with its Euclidean
    range.  Ties resolve to the earliest obstacle in world order."""
    best: Optional[Tuple[Obstacle, float]] = None
    for obs in world.obstacles:
        if obs.x < world.ego.x:
            continue
        rng = math.hypot(obs.x - world.ego.x, obs.y - world.ego.y)
        if best is None or rng < best[1]:
            best = (obs, rng)
    return best


def _invalid(spec: SensorSpec, world: WorldState) -> Measurement:
    return Measurement(
        sensor=spec.kind,
        tick=world.tick,
        values=np.array([np.nan, np.nan]),
        variance=noise_variance_for(spec, world.weather),
        valid=False,
    )


def sense(spec: SensorSpec, world: WorldState) -> Measurement:
    """Read the nearest obstacle ahead through this sensor.

    Channel layouts (all two-channel, noise shared across channels):
      camera: [range to target, ego lateral offset from lane centre]
      lidar:  [range to target, bearing to target]
      radar:  [range to target, closing speed toward target]

    Targets beyond the weather-degraded range, or an empty road, produce
    an invalid measurement and consume no randomness.
    """
    target = nearest_obstacle_ahead(world)
    if target is None:
        return _invalid(spec, world)
    obs, rng_m = target
    if rng_m > degrade_range(spec, world.weather):
        return _invalid(spec, world)

    dx = obs.x - world.ego.x
    dy = obs.y - world.ego.y
    if spec.kind is SensorKind.CAMERA:
        truth = np.array([rng_m, world.ego.y])
    elif spec.kind is SensorKind.LIDAR:
        truth = np.array([rng_m, math.atan2(dy, dx)])
    else:
        closing = 0.0 if rng_m < 1e-9 else dx * (world.ego.v - obs.vx) / rng_m
        truth = np.array([rng_m, closing])

    variance = noise_variance_for(spec, world.weather)
    noise = world.rng.normal(0.0, math.sqrt(variance), size=2)
    return Measurement(
        sensor=spec.kind,
        tick=world.tick,
        values=truth + noise,
        variance=variance,
        valid=True,
    )


def sense_occupancy(
    spec: SensorSpec,
    world: WorldState,
    geometry: GridGeometry,
    base_sigma: float = 0.15,
    rng: Optional[np.random.Generator] = None,
) -> OccupancyGrid:
    """Noisy occupancy evidence over the perception window.

    Occupied cells read near 0.9 and free cells near 0.1, perturbed by
    weather-scaled noise and clamped to [0, 1].  Cells whose centres lie
    beyond the sensor's effective range report 0.5 (no information).
    Pass an explicit generator to keep grid noise off the world's stream.
    """
    truth = occupancy_truth(world, geometry)
    mult = spec.weather_variance_multiplier[world.weather.kind]
    sigma = base_sigma * math.sqrt(
        mult * (1.0 + spec.intensity_slope * world.weather.intensity)
    )
    evidence = np.where(truth.values > 0.5, 0.9, 0.1)
    if rng is None:
        rng = world.rng
    noise = rng.normal(0.0, sigma, size=truth.values.size)
    values = np.clip(evidence + noise, 0.0, 1.0)

    effective = degrade_range(spec, world.weather)
    grid = grid_for(geometry, world.ego, fill=0.5)
    cs = grid.cell_size
    centers_x = grid.origin_x + (np.arange(grid.width) + 0.5) * cs
    centers_y = grid.origin_y + (np.arange(grid.height) + 0.5) * cs
    gx, gy = np.meshgrid(centers_x, centers_y)
    dist = np.hypot(gx - world.ego.x, gy - world.ego.y).reshape(-1)
    values = np.where(dist > effective, 0.5, values)

    grid.values = values
    return grid


# ---------------------------------------------------------------------------
# stock sensor suite
# ---------------------------------------------------------------------------

def default_camera_spec() -> SensorSpec:
    """Short range, cheap, falls apart in fog."""
    return SensorSpec(
        kind=SensorKind.CAMERA,
        base_variance=0.25,
        max_range=80.0,
        weather_variance_multiplier={
            WeatherKind.CLEAR: 1.0,
            WeatherKind.FOG: 4.0,
            WeatherKind.RAIN: 2.5,
            WeatherKind.SNOW: 3.0,
        },
        weather_range_multiplier={
            WeatherKind.CLEAR: 1.0,
            WeatherKind.FOG: 0.6,
            WeatherKind.RAIN: 0.8,
            WeatherKind.SNOW: 0.7,
        },
    )


def default_lidar_spec() -> SensorSpec:
    """Precise ranging; rain and snow halve the usable range."""
    return SensorSpec(
        kind=SensorKind.LIDAR,
        base_variance=0.02,
        max_range=100.0,
        weather_variance_multiplier={
            WeatherKind.CLEAR: 1.0,
            WeatherKind.FOG: 2.0,
            WeatherKind.RAIN: 2.0,
            WeatherKind.SNOW: 2.5,
        },
        weather_range_multiplier={
            WeatherKind.CLEAR: 1.0,
            WeatherKind.FOG: 0.8,
            WeatherKind.RAIN: 0.5,
            WeatherKind.SNOW: 0.5,
        },
    )


def default_radar_spec() -> SensorSpec:
    """All-weather workhorse: modest noise, barely degrades."""
    return SensorSpec(
        kind=SensorKind.RADAR,
        base_variance=0.09,
        max_range=150.0,
        weather_variance_multiplier={
            WeatherKind.CLEAR: 1.0,
            WeatherKind.FOG: 1.2,
            WeatherKind.RAIN: 1.1,
            WeatherKind.SNOW: 1.3,
        },
        weather_range_multiplier={
            WeatherKind.CLEAR: 1.0,
            WeatherKind.FOG: 0.9,
            WeatherKind.RAIN: 0.95,
            WeatherKind.SNOW: 0.9,
        },
    )


def default_sensor_suite() -> Tuple[SensorSpec, SensorSpec, SensorSpec]:
    """Camera, lidar, radar with the stock weather tables, in that order."""
    return (default_camera_spec(), default_lidar_spec(), default_radar_spec())
