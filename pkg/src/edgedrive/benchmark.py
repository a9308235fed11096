"""Edge vs cloud deployment benchmark.

Runs the full sense, fuse, perceive, decide loop with injected compute and
network latency, so every decision acts on stale state: a command chosen at
tick t takes effect ceil(latency / dt) ticks later, and until it lands the
previously applied command keeps driving.  Episode metrics aggregate into a
per (mode, weather) report, plus a paired fusion-accuracy experiment that
pits the fused estimator against each sensor alone on identical episodes.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .agent import (
    ACTIONS,
    N_ACTIONS,
    AgentConfig,
    EpisodeRecord,
    _estimator_for,
    cumulative_reward,
    greedy_action,
    reward_for,
    state_vector,
)
from .errors import (
    ConfigurationError,
    DomainError,
    MissingCellError,
    UndefinedMetricError,
)
from .fusion import (
    STATE_GAP,
    DrivingStateEstimator,
    inverse_variance_weights,
)
from .nn import Mlp
from .perception import (
    DetectionCounts,
    GridGeometry,
    classify_cells,
    detections_from_grid,
    match_detections,
    matched_ious,
    occupancy_truth,
    train_cell_classifier,
    true_negative_cells,
    truth_boxes,
)
from .sensors import (
    SensorKind,
    SensorSpec,
    default_sensor_suite,
    nearest_obstacle_ahead,
    noise_variance_for,
    sense,
    sense_occupancy,
)
from .simulation import (
    Action,
    EpisodeConfig,
    WeatherCondition,
    WeatherKind,
    derive_seed,
    spawn_scenario,
    step_world,
)


class ModeKind(Enum):
    EDGE = "edge"
    CLOUD = "cloud"


@dataclass(frozen=True)
class LatencyModel:
    """Per-decision latency: compute, network round trip and a weather
    surcharge, each expressed as (mean_ms, fractional jitter)."""

    compute_ms: Tuple[float, float]
    rtt_ms: Tuple[float, float]
    weather_penalty_ms: Mapping[WeatherKind, float]
    penalty_jitter: float = 0.1

    def validate(self) -> None:
        for name, (mean, jitter) in (
            ("compute_ms", self.compute_ms),
            ("rtt_ms", self.rtt_ms),
        ):
            if mean < 0.0:
                raise ConfigurationError(f"latency.{name} mean must be >= 0, got {mean}")
            if jitter < 0.0:
                raise ConfigurationError(
                    f"latency.{name} jitter must be >= 0, got {jitter}"
                )
        if self.penalty_jitter < 0.0:
            raise ConfigurationError(
                f"latency.penalty_jitter must be >= 0, got {self.penalty_jitter}"
            )
        missing = [k.value for k in WeatherKind if k not in self.weather_penalty_ms]
        if missing:
            raise ConfigurationError(
                f"latency.weather_penalty_ms missing weather kinds: {missing}"
            )
        for kind, pen in self.weather_penalty_ms.items():
            if pen < 0.0:
                raise ConfigurationError(
                    f"latency.weather_penalty_ms[{kind.value}] must be >= 0, got {pen}"
                )


@dataclass(frozen=True)
class DeploymentMode:
    """Where inference runs, and the latency that placement costs."""

    kind: ModeKind
    latency_model: LatencyModel

    def __post_init__(self):
        self.latency_model.validate()
        if self.kind is ModeKind.EDGE and self.latency_model.rtt_ms[0] != 0.0:
            raise ConfigurationError(
                "edge deployment has no network round trip; rtt mean must be 0"
            )


def edge_mode(jitter: float = 0.1) -> DeploymentMode:
    """On-vehicle inference: 45 ms clear-weather compute, no round trip."""
    return DeploymentMode(
        kind=ModeKind.EDGE,
        latency_model=LatencyModel(
            compute_ms=(45.0, jitter),
            rtt_ms=(0.0, jitter),
            weather_penalty_ms={
                WeatherKind.CLEAR: 0.0,
                WeatherKind.FOG: 5.0,
                WeatherKind.RAIN: 7.0,
                WeatherKind.SNOW: 10.0,
            },
            penalty_jitter=jitter,
        ),
    )


def cloud_mode(jitter: float = 0.1) -> DeploymentMode:
    """Remote inference: 40 ms compute plus a 200 ms round trip, and weather
    drags the network down far harder than the local chip."""
    return DeploymentMode(
        kind=ModeKind.CLOUD,
        latency_model=LatencyModel(
            compute_ms=(40.0, jitter),
            rtt_ms=(200.0, jitter),
            weather_penalty_ms={
                WeatherKind.CLEAR: 0.0,
                WeatherKind.FOG: 30.0,
                WeatherKind.RAIN: 50.0,
                WeatherKind.SNOW: 70.0,
            },
            penalty_jitter=jitter,
        ),
    )


def default_modes() -> Tuple[DeploymentMode, DeploymentMode]:
    return (edge_mode(), cloud_mode())


def sample_latency(
    model: LatencyModel,
    weather: Union[WeatherCondition, WeatherKind],
    rng: np.random.Generator,
) -> float:
    """One decision's latency in ms: compute + rtt + weather penalty, each
    drawn with its own uniform jitter, clamped at zero.

    Always consumes exactly three draws so the stream stays aligned across
    configurations.
    """
    kind = weather.kind if isinstance(weather, WeatherCondition) else weather
    if kind not in model.weather_penalty_ms:
        raise ConfigurationError(f"no weather penalty configured for {kind}")
    u = rng.uniform(-1.0, 1.0, size=3)
    compute = model.compute_ms[0] * (1.0 + model.compute_ms[1] * u[0])
    rtt = model.rtt_ms[0] * (1.0 + model.rtt_ms[1] * u[1])
    penalty = model.weather_penalty_ms[kind] * (1.0 + model.penalty_jitter * u[2])
    return max(0.0, compute + rtt + penalty)


def delay_ticks(latency_ms: float, dt: float) -> int:
    """Ticks before a command lands: ceil(latency / tick length)."""
    if latency_ms < 0.0:
        raise DomainError(f"latency must be >= 0, got {latency_ms}")
    if dt <= 0.0:
        raise DomainError(f"dt must be > 0, got {dt}")
    return math.ceil(latency_ms / (dt * 1000.0))


# ---------------------------------------------------------------------------
# metric formulas
# ---------------------------------------------------------------------------

def compute_accuracy(counts: DetectionCounts) -> float:
    """(TP + TN) / (TP + TN + FP + FN) * 100."""
    denom = counts.tp + counts.tn + counts.fp + counts.fn
    if denom == 0:
        raise UndefinedMetricError("accuracy is undefined for all-zero counts")
    return 100.0 * (counts.tp + counts.tn) / denom


def compute_collision_rate(collisions: int, runs: int) -> float:
    """collisions / runs * 100."""
    if runs == 0:
        raise UndefinedMetricError("collision rate is undefined for zero runs")
    if runs < 0 or collisions < 0:
        raise DomainError("collision counts must be >= 0")
    if collisions > runs:
        raise DomainError(f"{collisions} collisions cannot exceed {runs} runs")
    return 100.0 * collisions / runs


def compute_lane_departure_rate(departure_ticks: int, total_ticks: int) -> float:
    """departure_ticks / total_ticks * 100."""
    if total_ticks == 0:
        raise UndefinedMetricError("lane departure rate is undefined for zero ticks")
    if total_ticks < 0 or departure_ticks < 0:
        raise DomainError("tick counts must be >= 0")
    if departure_ticks > total_ticks:
        raise DomainError(
            f"{departure_ticks} departure ticks cannot exceed {total_ticks} ticks"
        )
    return 100.0 * departure_ticks / total_ticks


# ---------------------------------------------------------------------------
# pipeline episodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeMetrics:
    """Everything measured over one pipeline episode."""

    collided: bool
    lane_departure_ticks: int
    total_ticks: int
    mean_latency_ms: float
    counts: DetectionCounts
    mean_iou: float
    cumulative_reward: float

    def __post_init__(self):
        if self.total_ticks < 1:
            raise DomainError(f"total_ticks must be >= 1, got {self.total_ticks}")
        if not 0 <= self.lane_departure_ticks <= self.total_ticks:
            raise DomainError("lane_departure_ticks must lie in [0, total_ticks]")


@dataclass(frozen=True)
class EpisodeRow:
    """One episodes.csv row: where it ran, plus its metrics."""

    mode: str
    weather: str
    seed: int
    metrics: EpisodeMetrics


_classifier_cache: Dict[int, Mlp] = {}


def default_classifier(seed: int = 0) -> Mlp:
    """Process-wide cell classifier so episodes share one trained model."""
    if seed not in _classifier_cache:
        _classifier_cache[seed] = train_cell_classifier(seed=seed)
    return _classifier_cache[seed]


def run_pipeline_episode(
    mode: DeploymentMode,
    scenario: EpisodeConfig,
    agent: Optional[Mlp],
    seed: int,
    sensors: Optional[Sequence[SensorSpec]] = None,
    config: Optional[AgentConfig] = None,
    classifier: Optional[Mlp] = None,
    geometry: Optional[GridGeometry] = None,
    perception_interval: int = 10,
    estimator: Optional[DrivingStateEstimator] = None,
) -> EpisodeMetrics:
    """One full pipeline episode under a deployment mode.

    Each tick senses, fuses, and decides; the decision joins an in-flight
    command queue and lands delay_ticks(latency, dt) later, the newest
    landed command winning.  Until something lands the previous command
    persists (initially MAINTAIN), so zero latency reproduces direct
    control exactly.  agent=None drives uniformly at random.  The grid
    pipeline runs every perception_interval ticks on its own noise stream,
    feeding detection metrics without touching the trajectory.
    """
    if perception_interval < 1:
        raise ConfigurationError(
            f"perception_interval must be >= 1, got {perception_interval}"
        )
    if sensors is None:
        sensors = default_sensor_suite()
    if config is None:
        config = AgentConfig()
    if classifier is None:
        classifier = default_classifier()
    if geometry is None:
        geometry = GridGeometry()
    occupancy_spec = next(
        (sp for sp in sensors if sp.kind is SensorKind.CAMERA), sensors[0]
    )

    weather = scenario.weather
    world = spawn_scenario(scenario, seed)
    estimator = _estimator_for(scenario, estimator)
    est = estimator.reset(scenario.v0)
    est = estimator.step(est, [sense(sp, world) for sp in sensors], world.ego.v)
    state = state_vector(est, weather)

    lat_rng = np.random.default_rng(derive_seed(seed, 101))
    occ_rng = np.random.default_rng(derive_seed(seed, 102))
    policy_rng = (
        np.random.default_rng(derive_seed(seed, 103)) if agent is None else None
    )

    current = Action.MAINTAIN
    pending: List[Tuple[int, int, Action]] = []  # (lands_at, decided_at, action)
    latencies: List[float] = []
    rewards: List[float] = []
    lane_departure_ticks = 0
    collided = False
    counts = DetectionCounts(0, 0, 0, 0)
    iou_sum = 0.0

    while not world.done:
        if agent is None:
            a_idx = int(policy_rng.integers(N_ACTIONS))
        else:
            a_idx = greedy_action(agent, state)
        latency = sample_latency(mode.latency_model, weather, lat_rng)
        latencies.append(latency)
        pending.append(
            (world.tick + delay_ticks(latency, scenario.dt), world.tick, ACTIONS[a_idx])
        )

        landed = [p for p in pending if p[0] <= world.tick]
        if landed:
            newest = max(landed, key=lambda p: p[1])
            current = newest[2]
            pending = [p for p in pending if p[0] > world.tick and p[1] > newest[1]]

        world, outcome = step_world(world, current)
        est = estimator.step(est, [sense(sp, world) for sp in sensors], world.ego.v)
        state = state_vector(est, weather)

        rewards.append(reward_for(config, current, outcome))
        lane_departure_ticks += int(outcome.lane_departed)
        collided = collided or outcome.collided

        if (world.tick - 1) % perception_interval == 0:
            occ = sense_occupancy(occupancy_spec, world, geometry, rng=occ_rng)
            cls = classify_cells(classifier, occ)
            dets = detections_from_grid(cls, occ)
            truths = truth_boxes(world, geometry)
            tn = true_negative_cells(cls, occupancy_truth(world, geometry))
            counts = counts + match_detections(dets, truths, tn_cells=tn)
            iou_sum += sum(matched_ious(dets, truths))

    return EpisodeMetrics(
        collided=collided,
        lane_departure_ticks=lane_departure_ticks,
        total_ticks=world.tick,
        mean_latency_ms=float(np.mean(latencies)),
        counts=counts,
        mean_iou=iou_sum / counts.tp if counts.tp else 0.0,
        cumulative_reward=cumulative_reward(
            rewards, config.gamma, config.discount_convention
        ),
    )


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportCell:
    mode: str
    weather: str
    episodes: int
    accuracy_pct: float
    mean_latency_ms: float
    collision_rate_pct: float
    lane_departure_rate_pct: float
    mean_iou: float
    mean_cumulative_reward: float


@dataclass(frozen=True)
class BenchmarkReport:
    cells: Tuple[ReportCell, ...]

    @property
    def total_episodes(self) -> int:
        return sum(c.episodes for c in self.cells)

    def cell(self, mode: str, weather: str) -> ReportCell:
        for c in self.cells:
            if c.mode == mode and c.weather == weather:
                return c
        raise MissingCellError(f"report has no cell (mode={mode}, weather={weather})")

    def to_dict(self) -> dict:
        return {
            "schema": "edgedrive-benchmark-report",
            "version": 1,
            "total_episodes": self.total_episodes,
            "cells": [
                {
                    "mode": c.mode,
                    "weather": c.weather,
                    "episodes": c.episodes,
                    "accuracy_pct": c.accuracy_pct,
                    "mean_latency_ms": c.mean_latency_ms,
                    "collision_rate_pct": c.collision_rate_pct,
                    "lane_departure_rate_pct": c.lane_departure_rate_pct,
                    "mean_iou": c.mean_iou,
                    "mean_cumulative_reward": c.mean_cumulative_reward,
                }
                for c in self.cells
            ],
        }


def aggregate_report(
    rows: Sequence[EpisodeRow],
    modes: Sequence[str],
    weathers: Sequence[str],
) -> BenchmarkReport:
    """Reduce episode rows into the per (mode, weather) report.

    Rows are sorted by seed inside each cell before reduction, so the
    report is invariant to arrival order; every requested cell must hold
    at least one episode.
    """
    cells: List[ReportCell] = []
    for mode in modes:
        for weather in weathers:
            members = sorted(
                (r for r in rows if r.mode == mode and r.weather == weather),
                key=lambda r: r.seed,
            )
            if not members:
                raise MissingCellError(
                    f"no episodes for cell (mode={mode}, weather={weather})"
                )
            n = len(members)
            counts = DetectionCounts(0, 0, 0, 0)
            for r in members:
                counts = counts + r.metrics.counts
            tp_total = sum(r.metrics.counts.tp for r in members)
            iou_total = sum(r.metrics.mean_iou * r.metrics.counts.tp for r in members)
            cells.append(
                ReportCell(
                    mode=mode,
                    weather=weather,
                    episodes=n,
                    accuracy_pct=compute_accuracy(counts),
                    mean_latency_ms=float(
                        np.mean([r.metrics.mean_latency_ms for r in members])
                    ),
                    collision_rate_pct=compute_collision_rate(
                        sum(r.metrics.collided for r in members), n
                    ),
                    lane_departure_rate_pct=compute_lane_departure_rate(
                        sum(r.metrics.lane_departure_ticks for r in members),
                        sum(r.metrics.total_ticks for r in members),
                    ),
                    mean_iou=iou_total / tp_total if tp_total else 0.0,
                    mean_cumulative_reward=float(
                        np.mean([r.metrics.cumulative_reward for r in members])
                    ),
                )
            )
    return BenchmarkReport(cells=tuple(cells))


def run_benchmark(
    agent: Optional[Mlp],
    scenario: EpisodeConfig,
    episodes_per_cell: int,
    master_seed: int,
    modes: Optional[Sequence[DeploymentMode]] = None,
    weathers: Optional[Sequence[WeatherCondition]] = None,
    threads: int = 1,
    sensors: Optional[Sequence[SensorSpec]] = None,
    config: Optional[AgentConfig] = None,
    classifier: Optional[Mlp] = None,
    perception_interval: int = 10,
    estimator: Optional[DrivingStateEstimator] = None,
) -> Tuple[BenchmarkReport, List[EpisodeRow]]:
    """Benchmark every (mode, weather) cell on identical episode seeds.

    Episode seeds depend only on (master_seed, weather, index), so modes
    face the same scenario draws; with threads > 1 episodes fan out over a
    worker pool, and the deterministic seeding plus order-independent
    aggregation make parallel and serial runs emit identical reports.
    """
    scenario.validate()
    if episodes_per_cell < 1:
        raise ConfigurationError(
            f"episodes_per_cell must be >= 1, got {episodes_per_cell}"
        )
    if threads < 1:
        raise ConfigurationError(f"threads must be >= 1, got {threads}")
    if modes is None:
        modes = default_modes()
    if weathers is None:
        weathers = tuple(WeatherCondition(kind) for kind in WeatherKind)
    if classifier is None:
        classifier = default_classifier()

    kind_order = list(WeatherKind)
    tasks = []
    for mode in modes:
        for weather in weathers:
            for i in range(episodes_per_cell):
                ep_seed = derive_seed(
                    master_seed,
                    50,
                    kind_order.index(weather.kind),
                    int(round(weather.intensity * 1000)),
                    i,
                )
                tasks.append((mode, weather, ep_seed))

    def run_one(task) -> EpisodeRow:
        mode, weather, ep_seed = task
        metrics = run_pipeline_episode(
            mode,
            replace(scenario, weather=weather),
            agent,
            ep_seed,
            sensors=sensors,
            config=config,
            classifier=classifier,
            perception_interval=perception_interval,
            estimator=estimator,
        )
        return EpisodeRow(
            mode=mode.kind.value,
            weather=weather.kind.value,
            seed=ep_seed,
            metrics=metrics,
        )

    if threads == 1:
        rows = [run_one(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_one, tasks))

    report = aggregate_report(
        rows,
        modes=[m.kind.value for m in modes],
        weathers=[w.kind.value for w in weathers],
    )
    return report, rows


# ---------------------------------------------------------------------------
# fused vs single-sensor accuracy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionCell:
    """Gap-tracking error of the fused estimator against each sensor alone,
    on identical episodes, plus the camera's share of the fusion weight."""

    weather: str
    n_samples: int
    rmse_fused: float
    rmse_by_sensor: Mapping[str, float]
    camera_weight: float

    @property
    def best_single_rmse(self) -> float:
        return min(self.rmse_by_sensor.values())


def camera_fusion_weight(
    weather: WeatherCondition, sensors: Optional[Sequence[SensorSpec]] = None
) -> float:
    """The camera's normalized inverse-variance weight under a weather."""
    if sensors is None:
        sensors = default_sensor_suite()
    variances = [noise_variance_for(sp, weather) for sp in sensors]
    weights = inverse_variance_weights(variances)
    for sp, w in zip(sensors, weights):
        if sp.kind is SensorKind.CAMERA:
            return float(w)
    raise ConfigurationError("sensor suite has no camera")


def fusion_rmse_experiment(
    scenario: EpisodeConfig,
    episodes: int,
    seed: int,
    weathers: Optional[Sequence[WeatherCondition]] = None,
    sensors: Optional[Sequence[SensorSpec]] = None,
    estimator: Optional[DrivingStateEstimator] = None,
) -> Dict[str, FusionCell]:
    """Paired gap-RMSE comparison: one estimator fusing every sensor versus
    one estimator per single sensor, all fed the same measurement draws on
    the same constant-heading episodes.

    Errors are scored only on ticks where every sensor returned a valid
    reading, so each estimator saw the same evidence.
    """
    scenario.validate()
    if episodes < 1:
        raise ConfigurationError(f"episodes must be >= 1, got {episodes}")
    if weathers is None:
        weathers = tuple(WeatherCondition(kind) for kind in WeatherKind)
    if sensors is None:
        sensors = default_sensor_suite()
    estimator = _estimator_for(scenario, estimator)

    out: Dict[str, FusionCell] = {}
    for wi, weather in enumerate(weathers):
        cfg = replace(scenario, weather=weather)
        sq_fused = 0.0
        sq_single = np.zeros(len(sensors))
        n = 0
        for i in range(episodes):
            world = spawn_scenario(cfg, derive_seed(seed, 60, wi, i))
            est_fused = estimator.reset(cfg.v0)
            est_single = [estimator.reset(cfg.v0) for _ in sensors]
            while not world.done:
                world, _ = step_world(world, Action.MAINTAIN)
                meas = [sense(sp, world) for sp in sensors]
                est_fused = estimator.step(est_fused, meas, world.ego.v)
                est_single = [
                    estimator.step(e, [m], world.ego.v)
                    for e, m in zip(est_single, meas)
                ]
                ahead = nearest_obstacle_ahead(world)
                if ahead is None or not all(m.valid for m in meas):
                    continue
                true_gap = ahead[1]
                sq_fused += (est_fused.mean[STATE_GAP] - true_gap) ** 2
                for j, e in enumerate(est_single):
                    sq_single[j] += (e.mean[STATE_GAP] - true_gap) ** 2
                n += 1
        if n == 0:
            raise UndefinedMetricError(
                f"no ticks with all sensors valid under {weather.kind.value}"
            )
        out[weather.kind.value] = FusionCell(
            weather=weather.kind.value,
            n_samples=n,
            rmse_fused=math.sqrt(sq_fused / n),
            rmse_by_sensor={
                sp.kind.value: math.sqrt(sq_single[j] / n)
                for j, sp in enumerate(sensors)
            },
            camera_weight=camera_fusion_weight(weather, sensors),
        )
    return out


# ---------------------------------------------------------------------------
# stable file formats
# ---------------------------------------------------------------------------

EPISODES_CSV_HEADER = [
    "mode",
    "weather",
    "seed",
    "collided",
    "lane_departure_ticks",
    "total_ticks",
    "mean_latency_ms",
    "tp",
    "tn",
    "fp",
    "fn",
    "mean_iou",
    "cumulative_reward",
]

CONVERGENCE_CSV_HEADER = [
    "episode",
    "weather",
    "cumulative_reward",
    "epsilon",
    "collided",
    "ticks",
]


def write_episodes_csv(rows: Sequence[EpisodeRow], path: Union[str, Path]) -> None:
    """One row per episode, in run order; floats use repr round-tripping."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPISODES_CSV_HEADER)
        for r in rows:
            m = r.metrics
            writer.writerow(
                [
                    r.mode,
                    r.weather,
                    r.seed,
                    int(m.collided),
                    m.lane_departure_ticks,
                    m.total_ticks,
                    repr(m.mean_latency_ms),
                    m.counts.tp,
                    m.counts.tn,
                    m.counts.fp,
                    m.counts.fn,
                    repr(m.mean_iou),
                    repr(m.cumulative_reward),
                ]
            )


def write_convergence_csv(
    history: Sequence[EpisodeRecord], path: Union[str, Path]
) -> None:
    """Training curve rows, one per episode."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CONVERGENCE_CSV_HEADER)
        for rec in history:
            writer.writerow(
                [
                    rec.episode,
                    rec.weather,
                    repr(rec.cumulative_reward),
                    repr(rec.epsilon),
                    int(rec.collided),
                    rec.ticks,
                ]
            )


def write_report_json(report: BenchmarkReport, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
