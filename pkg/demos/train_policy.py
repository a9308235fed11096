"""Train a small DQN driver and compare it against a random policy.

The agent never sees ground truth: every tick it gets the fused state
estimate built from noisy camera, radar, and lidar readings, picks one
of five driving actions, and learns from reward alone.  A shortened
exploration schedule keeps this demo quick; the test suite trains the
full-length configuration.

Run:  python3 demos/train_policy.py
"""

from dataclasses import replace
from pathlib import Path

import numpy as np

from edgedrive.agent import (
    AgentConfig,
    evaluate_policy,
    train_agent,
)
from edgedrive.nn import save_mlp
from edgedrive.simulation import EpisodeConfig

EPISODES = 1000
SEED = 7
MODEL_PATH = Path(__file__).parent / "out" / "model.json"


def trailing(values, n=100):
    tail = values[-n:]
    return sum(tail) / len(tail)


def main() -> None:
    scenario = EpisodeConfig()
    config = replace(AgentConfig(), epsilon_decay_ticks=30_000)

    print(f"training {EPISODES} episodes (seed {SEED}), rotating weather")
    print(f"network: {8} inputs -> {config.hidden_dims} hidden -> 5 actions")
    print("(a shortened exploration schedule; the test suite runs the full one)")
    print()

    result = train_agent(scenario, config, EPISODES, SEED)

    print("episode   mean reward   collision rate   epsilon")
    rewards = [rec.cumulative_reward for rec in result.history]
    crashes = [1.0 if rec.collided else 0.0 for rec in result.history]
    for stop in range(100, EPISODES + 1, 100):
        r = trailing(rewards[:stop])
        c = trailing(crashes[:stop])
        eps = result.history[stop - 1].epsilon
        print(f"{stop:7d}   {r:11.2f}   {100 * c:13.1f}%   {eps:7.3f}")

    print()
    print("evaluating 50 episodes per weather, greedy policy vs uniform random")
    greedy = evaluate_policy(result.qnet, scenario, 50, 11)
    random_ = evaluate_policy(None, scenario, 50, 11)

    print()
    print("weather   random crashes   greedy crashes   greedy mean reward")
    for weather in ("clear", "fog", "rain", "snow"):
        g = greedy[weather]
        r = random_[weather]
        print(
            f"{weather:7s}   {r.collision_rate_pct:13.1f}%   "
            f"{g.collision_rate_pct:13.1f}%   {g.mean_cumulative_reward:15.2f}"
        )

    mean_random = np.mean([random_[w].collision_rate_pct for w in random_])
    mean_greedy = np.mean([greedy[w].collision_rate_pct for w in greedy])
    print()
    print(
        f"overall collision rate: random {mean_random:.1f}%, "
        f"trained {mean_greedy:.1f}%"
    )

    MODEL_PATH.parent.mkdir(parents=True, exist_ok=True)
    save_mlp(result.qnet, MODEL_PATH)
    print(f"saved the policy to {MODEL_PATH} for edge_vs_cloud.py")


if __name__ == "__main__":
    main()
