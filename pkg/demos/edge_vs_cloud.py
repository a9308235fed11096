"""Benchmark the same driving policy on-vehicle versus in the cloud.

Both deployments run identical episode seeds; the only difference is
where inference happens.  Cloud inference pays a network round trip that
worsens with weather, so its commands land several control ticks late
and the car reacts to a world that has moved on.  A delay sweep at the
end isolates the mechanism: collisions never go down as staleness rises.

Run:  python3 demos/edge_vs_cloud.py
(reuses demos/out/model.json from train_policy.py when present)
"""

from dataclasses import replace
from pathlib import Path

from edgedrive.agent import AgentConfig, train_agent
from edgedrive.benchmark import (
    DeploymentMode,
    LatencyModel,
    ModeKind,
    run_benchmark,
    run_pipeline_episode,
)
from edgedrive.nn import load_mlp, save_mlp
from edgedrive.simulation import EpisodeConfig, WeatherCondition, WeatherKind

MODEL_PATH = Path(__file__).parent / "out" / "model.json"
WEATHERS = tuple(WeatherCondition(k) for k in WeatherKind)


def obtain_policy():
    if MODEL_PATH.exists():
        print(f"loading trained policy from {MODEL_PATH}")
        return load_mlp(MODEL_PATH)
    print("no snapshot found, training one (about 2 minutes)")
    config = replace(AgentConfig(), epsilon_decay_ticks=30_000)
    result = train_agent(EpisodeConfig(), config, 1000, 7)
    MODEL_PATH.parent.mkdir(parents=True, exist_ok=True)
    save_mlp(result.qnet, MODEL_PATH)
    print(f"saved policy to {MODEL_PATH}")
    return result.qnet


def main() -> None:
    scenario = EpisodeConfig()
    qnet = obtain_policy()

    print()
    print("benchmarking 50 episodes per cell, identical seeds across modes")
    report, _ = run_benchmark(qnet, scenario, 50, master_seed=7, threads=4)

    print()
    print("weather   edge latency   cloud latency   edge crashes   cloud crashes")
    for weather in ("clear", "fog", "rain", "snow"):
        e = report.cell("edge", weather)
        c = report.cell("cloud", weather)
        print(
            f"{weather:7s}   {e.mean_latency_ms:9.1f} ms   {c.mean_latency_ms:10.1f} ms"
            f"   {e.collision_rate_pct:11.1f}%   {c.collision_rate_pct:12.1f}%"
        )

    ratios = [
        report.cell("cloud", w).mean_latency_ms / report.cell("edge", w).mean_latency_ms
        for w in ("clear", "fog", "rain", "snow")
    ]
    print()
    print(
        f"cloud decisions arrive {min(ratios):.1f}x to {max(ratios):.1f}x later, "
        "turning one-tick reactions into multi-tick ones"
    )

    print()
    print("delay sweep in fog, 50 episodes per step (latency forced, no jitter)")
    print("decision delay   collisions")
    fog = replace(scenario, weather=WeatherCondition(WeatherKind.FOG))
    for delay in range(5):
        mode = DeploymentMode(
            kind=ModeKind.EDGE,
            latency_model=LatencyModel(
                compute_ms=(delay * 100.0, 0.0),
                rtt_ms=(0.0, 0.0),
                weather_penalty_ms={k: 0.0 for k in WeatherKind},
                penalty_jitter=0.0,
            ),
        )
        crashed = sum(
            run_pipeline_episode(
                mode, fog, qnet, 40_000 + i, perception_interval=10_000
            ).collided
            for i in range(50)
        )
        print(f"{delay:8d} tick   {crashed:10d}")


if __name__ == "__main__":
    main()
