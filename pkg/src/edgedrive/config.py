"""Run configuration: one JSON file drives every command.

The schema ships with embedded defaults; a user file only states what it
changes, and unknown keys are rejected with the offending path so typos
cannot silently fall back to defaults.  CLI flags are applied on top as a
final override layer.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .agent import AgentConfig
from .benchmark import DeploymentMode, LatencyModel, ModeKind
from .errors import ConfigurationError
from .sensors import SensorKind, SensorSpec, default_sensor_suite
from .simulation import EpisodeConfig, WeatherCondition, WeatherKind

ENV_CONFIG_PATH = "EDGEDRIVE_CONFIG"

WEATHER_NAMES = tuple(k.value for k in WeatherKind)
MODE_NAMES = tuple(m.value for m in ModeKind)


def _weather_table(values: Mapping[WeatherKind, float]) -> Dict[str, float]:
    return {k.value: float(v) for k, v in values.items()}


def _sensor_section(spec: SensorSpec) -> Dict[str, Any]:
    return {
        "base_variance": spec.base_variance,
        "max_range": spec.max_range,
        "intensity_slope": spec.intensity_slope,
        "variance_multiplier": _weather_table(spec.weather_variance_multiplier),
        "range_multiplier": _weather_table(spec.weather_range_multiplier),
    }


def default_config() -> Dict[str, Any]:
    """The full embedded default configuration, JSON-serializable."""
    scenario = EpisodeConfig()
    agent = AgentConfig()
    suite = {spec.kind.value: _sensor_section(spec) for spec in default_sensor_suite()}
    return {
        "seed": 42,
        "out_dir": "runs/default",
        "scenario": {
            "dt": scenario.dt,
            "max_ticks": scenario.max_ticks,
            "lane_half_width": scenario.lane_half_width,
            "v0": scenario.v0,
            "v_min": scenario.v_min,
            "v_max": scenario.v_max,
            "accel": scenario.accel,
            "brake_decel": scenario.brake_decel,
            "lateral_rate": scenario.lateral_rate,
            "ego_half_len": scenario.ego_half_len,
            "ego_half_wid": scenario.ego_half_wid,
            "n_obstacles": scenario.n_obstacles,
            "spawn_x_min": scenario.spawn_x_min,
            "spawn_x_max": scenario.spawn_x_max,
            "spawn_y_min": scenario.spawn_y_min,
            "spawn_y_max": scenario.spawn_y_max,
            "obstacle_speed_min": scenario.obstacle_speed_min,
            "obstacle_speed_max": scenario.obstacle_speed_max,
            "obstacle_half_extent": scenario.obstacle_half_extent,
            "respawn": scenario.respawn,
            "respawn_behind_m": scenario.respawn_behind_m,
        },
        "sensors": suite,
        "fusion": {
            "process_noise": [0.25, 0.25, 0.01, 0.04],
            "odometry_variance": 0.01,
            "initial_gap": 100.0,
        },
        "agent": {
            "learning_rate": agent.learning_rate,
            "gamma": agent.gamma,
            "epsilon_start": agent.epsilon_start,
            "epsilon_end": agent.epsilon_end,
            "epsilon_decay_ticks": agent.epsilon_decay_ticks,
            "batch_size": agent.batch_size,
            "target_sync_interval": agent.target_sync_interval,
            "replay_capacity": agent.replay_capacity,
            "min_replay": agent.min_replay,
            "train_every": agent.train_every,
            "hidden_dims": list(agent.hidden_dims),
            "reward_alive": agent.reward_alive,
            "reward_lane_departed": agent.reward_lane_departed,
            "reward_collision": agent.reward_collision,
            "reward_steering": agent.reward_steering,
            "discount_convention": agent.discount_convention,
        },
        "training": {
            "episodes": 2000,
            "weathers": list(WEATHER_NAMES),
        },
        "evaluation": {
            "episodes_per_weather": 200,
            "weathers": list(WEATHER_NAMES),
            "fusion_episodes": 0,
        },
        "benchmark": {
            "episodes_per_cell": 200,
            "modes": list(MODE_NAMES),
            "weathers": list(WEATHER_NAMES),
            "threads": 1,
            "perception_interval": 10,
        },
        "latency": {
            "edge": {
                "compute_ms": [45.0, 0.1],
                "rtt_ms": [0.0, 0.1],
                "penalty_jitter": 0.1,
                "weather_penalty_ms": {
                    "clear": 0.0,
                    "fog": 5.0,
                    "rain": 7.0,
                    "snow": 10.0,
                },
            },
            "cloud": {
                "compute_ms": [40.0, 0.1],
                "rtt_ms": [200.0, 0.1],
                "penalty_jitter": 0.1,
                "weather_penalty_ms": {
                    "clear": 0.0,
                    "fog": 30.0,
                    "rain": 50.0,
                    "snow": 70.0,
                },
            },
        },
    }


def deep_merge(base: Dict[str, Any], override: Mapping[str, Any], path: str = "") -> Dict[str, Any]:
    """Merge override into a copy of base, recursing through dicts.

    Keys absent from base are rejected, naming their dotted path.
    """
    merged = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigurationError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigurationError(f"config key {here} must be an object")
            merged[key] = deep_merge(base[key], value, here)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def weather_from_name(name: Any) -> WeatherCondition:
    """'fog' or {'kind': 'fog', 'intensity': 0.6} -> WeatherCondition."""
    if isinstance(name, Mapping):
        kind_name = name.get("kind")
        intensity = name.get("intensity", 1.0)
    else:
        kind_name = name
        intensity = 1.0
    try:
        kind = WeatherKind(str(kind_name).lower())
    except ValueError:
        raise ConfigurationError(
            f"unknown weather {kind_name!r}; allowed values: {', '.join(WEATHER_NAMES)}"
        )
    return WeatherCondition(kind, float(intensity))


def weathers_from_names(names: Sequence[Any]) -> Tuple[WeatherCondition, ...]:
    if not names:
        raise ConfigurationError("weather list must not be empty")
    return tuple(weather_from_name(n) for n in names)


def _weather_keyed(table: Mapping[str, float], section: str) -> Dict[WeatherKind, float]:
    out: Dict[WeatherKind, float] = {}
    for name, value in table.items():
        try:
            out[WeatherKind(str(name).lower())] = float(value)
        except ValueError:
            raise ConfigurationError(
                f"unknown weather {name!r} in {section}; "
                f"allowed values: {', '.join(WEATHER_NAMES)}"
            )
    return out


def scenario_from(section: Mapping[str, Any]) -> EpisodeConfig:
    cfg = EpisodeConfig(**{k: v for k, v in section.items()})
    cfg.validate()
    return cfg


def agent_from(section: Mapping[str, Any]) -> AgentConfig:
    section = dict(section)
    if "hidden_dims" in section:
        section["hidden_dims"] = tuple(int(h) for h in section["hidden_dims"])
    cfg = AgentConfig(**section)
    cfg.validate()
    return cfg


def sensors_from(section: Mapping[str, Any]) -> Tuple[SensorSpec, ...]:
    specs: List[SensorSpec] = []
    for kind_name, values in section.items():
        specs.append(
            SensorSpec(
                kind=SensorKind(kind_name),
                base_variance=float(values["base_variance"]),
                max_range=float(values["max_range"]),
                intensity_slope=float(values["intensity_slope"]),
                weather_variance_multiplier=_weather_keyed(
                    values["variance_multiplier"], f"sensors.{kind_name}"
                ),
                weather_range_multiplier=_weather_keyed(
                    values["range_multiplier"], f"sensors.{kind_name}"
                ),
            )
        )
    return tuple(specs)


def modes_from(
    latency_section: Mapping[str, Any], names: Sequence[str]
) -> Tuple[DeploymentMode, ...]:
    modes: List[DeploymentMode] = []
    for name in names:
        try:
            kind = ModeKind(str(name).lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown mode {name!r}; allowed values: {', '.join(MODE_NAMES)}"
            )
        section = latency_section[kind.value]
        model = LatencyModel(
            compute_ms=tuple(float(v) for v in section["compute_ms"]),
            rtt_ms=tuple(float(v) for v in section["rtt_ms"]),
            weather_penalty_ms=_weather_keyed(
                section["weather_penalty_ms"], f"latency.{kind.value}"
            ),
            penalty_jitter=float(section["penalty_jitter"]),
        )
        modes.append(DeploymentMode(kind=kind, latency_model=model))
    return tuple(modes)


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, already validated."""

    seed: int
    out_dir: Path
    scenario: EpisodeConfig
    sensors: Tuple[SensorSpec, ...]
    fusion_process_noise: Tuple[float, float, float, float]
    fusion_odometry_variance: float
    fusion_initial_gap: float
    agent: AgentConfig
    training_episodes: int
    training_weathers: Tuple[WeatherCondition, ...]
    evaluation_episodes: int
    evaluation_weathers: Tuple[WeatherCondition, ...]
    evaluation_fusion_episodes: int
    benchmark_episodes: int
    benchmark_modes: Tuple[DeploymentMode, ...]
    benchmark_weathers: Tuple[WeatherCondition, ...]
    benchmark_threads: int
    benchmark_perception_interval: int
    raw: Dict[str, Any]


def build_run_config(merged: Dict[str, Any]) -> RunConfig:
    """Validate a merged config dict into a RunConfig."""
    try:
        scenario = scenario_from(merged["scenario"])
        agent = agent_from(merged["agent"])
        sensors = sensors_from(merged["sensors"])
    except TypeError as exc:
        raise ConfigurationError(str(exc))
    fusion = merged["fusion"]
    process_noise = tuple(float(q) for q in fusion["process_noise"])
    if len(process_noise) != 4:
        raise ConfigurationError("fusion.process_noise must list 4 values")
    training = merged["training"]
    evaluation = merged["evaluation"]
    bench = merged["benchmark"]
    seed = int(merged["seed"])
    return RunConfig(
        seed=seed,
        out_dir=Path(merged["out_dir"]),
        scenario=scenario,
        sensors=sensors,
        fusion_process_noise=process_noise,
        fusion_odometry_variance=float(fusion["odometry_variance"]),
        fusion_initial_gap=float(fusion["initial_gap"]),
        agent=agent,
        training_episodes=int(training["episodes"]),
        training_weathers=weathers_from_names(training["weathers"]),
        evaluation_episodes=int(evaluation["episodes_per_weather"]),
        evaluation_weathers=weathers_from_names(evaluation["weathers"]),
        evaluation_fusion_episodes=int(evaluation["fusion_episodes"]),
        benchmark_episodes=int(bench["episodes_per_cell"]),
        benchmark_modes=modes_from(merged["latency"], bench["modes"]),
        benchmark_weathers=weathers_from_names(bench["weathers"]),
        benchmark_threads=int(bench["threads"]),
        benchmark_perception_interval=int(bench["perception_interval"]),
        raw=merged,
    )


def load_run_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Defaults <- config file (explicit path or $EDGEDRIVE_CONFIG) <- overrides."""
    merged = default_config()
    if config_path is None:
        config_path = os.environ.get(ENV_CONFIG_PATH) or None
    if config_path is not None:
        merged = deep_merge(merged, read_config_file(config_path))
    if overrides:
        merged = deep_merge(merged, overrides)
    return build_run_config(merged)
