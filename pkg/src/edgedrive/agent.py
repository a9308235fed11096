"""DQN driving agent.

Epsilon-greedy action selection over a tiny Q-network, a seeded replay
buffer, squared-TD-error training against a periodically synced target
network, and an episode loop that senses and fuses the world each tick
(the agent only ever sees the fused state estimate, never ground truth).
A tabular Q-update is included as the exact reference form of the same
learning rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError, UsageError
from .fusion import DrivingStateEstimator, GaussianEstimate
from .nn import (
    Activation,
    Mlp,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    sgd_step,
)
from .sensors import SensorSpec, default_sensor_suite, sense
from .simulation import (
    Action,
    EpisodeConfig,
    StepOutcome,
    WeatherCondition,
    WeatherKind,
    derive_seed,
    spawn_scenario,
    step_world,
)

ACTIONS: Tuple[Action, ...] = tuple(Action)
N_ACTIONS = len(ACTIONS)

WEATHER_ORDER: Tuple[WeatherKind, ...] = (
    WeatherKind.CLEAR,
    WeatherKind.FOG,
    WeatherKind.RAIN,
    WeatherKind.SNOW,
)

STATE_DIM = 4 + len(WEATHER_ORDER)
_STATE_SCALE = np.array([50.0, 10.0, 2.0, 20.0])

_WEATHER_EYE = np.eye(len(WEATHER_ORDER))
_WEATHER_INDEX = {kind: i for i, kind in enumerate(WEATHER_ORDER)}


def default_training_weathers() -> Tuple[WeatherCondition, ...]:
    """Full-intensity rotation over every weather kind."""
    return tuple(WeatherCondition(kind) for kind in WEATHER_ORDER)


def state_vector(est: GaussianEstimate, weather: WeatherCondition) -> np.ndarray:
    """Normalised fused state plus a weather one-hot: the agent's whole view."""
    if est.dim != 4:
        raise ShapeError(f"expected a 4-dimensional estimate, got {est.dim}")
    return np.concatenate(
        [est.mean / _STATE_SCALE, _WEATHER_EYE[_WEATHER_INDEX[weather.kind]]]
    )


@dataclass(frozen=True)
class Transition:
    """One environment step as seen by the learner."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float))
        object.__setattr__(self, "next_state", np.asarray(self.next_state, dtype=float))
        if not (0 <= self.action < N_ACTIONS):
            raise DomainError(f"action index {self.action} outside [0, {N_ACTIONS})")
        if not (
            np.isfinite(self.state).all()
            and np.isfinite(self.next_state).all()
            and np.isfinite(self.reward)
        ):
            raise DomainError("transition entries must be finite")


class ReplayBuffer:
    """Seeded ring buffer with uniform without-replacement batch sampling."""

    def __init__(self, capacity: int, seed: int):
        if capacity < 1:
            raise ConfigurationError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: List[Transition] = []
        self._pos = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._items)

    def add(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._pos] = transition
        self._pos = (self._pos + 1) % self.capacity

    def sample(self, batch_size: int) -> List[Transition]:
        n = len(self._items)
        if batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {batch_size}")
        if batch_size > n:
            raise UsageError(f"cannot sample {batch_size} of {n} stored transitions")
        if batch_size > n // 2:
            idx = self._rng.permutation(n)[:batch_size]
        else:
            # rejection sampling; cheap because batches are tiny vs capacity
            chosen: List[int] = []
            seen = set()
            while len(chosen) < batch_size:
                j = int(self._rng.integers(0, n))
                if j not in seen:
                    seen.add(j)
                    chosen.append(j)
            idx = np.array(chosen)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class AgentConfig:
    """Learning-rule and reward parameters.

    The epsilon schedule decays linearly from epsilon_start to epsilon_end
    over epsilon_decay_ticks environment ticks, then holds the floor.
    discount_convention selects how cumulative episode reward is reported:
    "paper" discounts the first reward once (gamma^i with i starting at 1),
    "standard" starts undiscounted (gamma^(i-1)).
    """

    learning_rate: float = 5e-4
    gamma: float = 0.97
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_ticks: int = 50_000
    batch_size: int = 64
    target_sync_interval: int = 250
    replay_capacity: int = 50_000
    min_replay: int = 500
    train_every: int = 1
    hidden_dims: Tuple[int, ...] = (64,)
    reward_alive: float = 1.0
    reward_lane_departed: float = -0.5
    reward_collision: float = -100.0
    reward_steering: float = -0.05
    discount_convention: str = "paper"

    def validate(self) -> None:
        if self.learning_rate < 0.0:
            raise ConfigurationError(
                f"agent.learning_rate must be >= 0, got {self.learning_rate}"
            )
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"agent.gamma must lie in [0, 1), got {self.gamma}")
        for name, eps in (
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ):
            if not 0.0 <= eps <= 1.0:
                raise ConfigurationError(f"agent.{name} must lie in [0, 1], got {eps}")
        if self.epsilon_end > self.epsilon_start:
            raise ConfigurationError("agent.epsilon_end must not exceed epsilon_start")
        if self.epsilon_decay_ticks < 1:
            raise ConfigurationError("agent.epsilon_decay_ticks must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("agent.batch_size must be >= 1")
        if self.target_sync_interval < 1:
            raise ConfigurationError("agent.target_sync_interval must be >= 1")
        if self.replay_capacity < self.batch_size:
            raise ConfigurationError("agent.replay_capacity must hold one batch")
        if self.min_replay < self.batch_size:
            raise ConfigurationError("agent.min_replay must be >= batch_size")
        if self.train_every < 1:
            raise ConfigurationError("agent.train_every must be >= 1")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError("agent.hidden_dims must be positive")
        if self.discount_convention not in ("paper", "standard"):
            raise ConfigurationError(
                "agent.discount_convention must be 'paper' or 'standard', "
                f"got {self.discount_convention!r}"
            )


def epsilon_at(config: AgentConfig, tick: int) -> float:
    """Linear decay from start to end over the configured tick budget."""
    frac = min(1.0, max(0, tick) / config.epsilon_decay_ticks)
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac


def select_action(
    q_values: np.ndarray, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy: explore uniformly with probability epsilon, else the
    argmax (ties to the lowest index).

    The greedy action is therefore chosen with probability
    1 - epsilon + epsilon/|A| and every other action with epsilon/|A|.
    epsilon=0 consumes no randomness.
    """
    q = np.asarray(q_values, dtype=float).reshape(-1)
    if q.size == 0:
        raise UsageError("empty action set")
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError(f"epsilon must lie in [0, 1], got {epsilon}")
    if not np.isfinite(q).all():
        raise DomainError("q_values must be finite")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def q_target(transition: Transition, gamma: float, q_next: np.ndarray) -> float:
    """r + gamma * max(q_next), with the bootstrap dropped on terminal steps."""
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    if transition.done:
        return float(transition.reward)
    return float(transition.reward + gamma * np.max(np.asarray(q_next, dtype=float)))


def train_step(
    qnet: Mlp, target_net: Mlp, batch: Sequence[Transition], config: AgentConfig
) -> float:
    """One SGD step on the mean squared TD error of the chosen actions.

    Only the chosen action's output receives gradient; returns the loss
    measured before the update.
    """
    if not batch:
        raise UsageError("empty batch")
    states = np.stack([t.state for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    if states.shape[1] != qnet.in_dim:
        raise ShapeError(
            f"transition states have dim {states.shape[1]}, "
            f"network expects {qnet.in_dim}"
        )
    actions = np.array([t.action for t in batch])
    rewards = np.array([t.reward for t in batch])
    live = np.array([0.0 if t.done else 1.0 for t in batch])

    q, cache = mlp_forward_cached(qnet, states)
    q_next = mlp_forward(target_net, next_states)
    targets = rewards + config.gamma * q_next.max(axis=1) * live

    rows = np.arange(len(batch))
    td = q[rows, actions] - targets
    loss = float(np.mean(td * td))

    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * td / len(batch)
    grads = mlp_backward(qnet, dq, cache)
    sgd_step(qnet, grads, config.learning_rate)
    return loss


def tabular_q_update(
    table: np.ndarray,
    s: int,
    a: int,
    r: float,
    s_next: int,
    alpha: float,
    gamma: float,
) -> np.ndarray:
    """In-place Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)).

    Terminal states are modelled as rows that are never updated (their
    zeros make the bootstrap vanish).
    """
    if not isinstance(table, np.ndarray) or table.ndim != 2:
        raise UsageError("table must be a 2-D ndarray indexed [state, action]")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    n_states, n_actions = table.shape
    for name, idx, limit in (("s", s, n_states), ("s_next", s_next, n_states)):
        if not 0 <= idx < limit:
            raise DomainError(f"{name}={idx} outside the table's {limit} states")
    if not 0 <= a < n_actions:
        raise DomainError(f"a={a} outside the table's {n_actions} actions")
    td = r + gamma * float(np.max(table[s_next])) - table[s, a]
    table[s, a] += alpha * td
    return table


def cumulative_reward(
    rewards: Sequence[float], gamma: float, convention: str = "paper"
) -> float:
    """Discounted episode return.

    "paper" discounts the first reward once (sum of gamma^i * r_i with i
    starting at 1); "standard" is the conventional gamma^(i-1) form.
    """
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    r = np.asarray(list(rewards), dtype=float)
    if r.size == 0:
        return 0.0
    if convention == "paper":
        powers = np.arange(1, r.size + 1)
    elif convention == "standard":
        powers = np.arange(0, r.size)
    else:
        raise ConfigurationError(
            f"convention must be 'paper' or 'standard', got {convention!r}"
        )
    return float(np.sum(np.power(gamma, powers) * r))


def reward_for(config: AgentConfig, action: Action, outcome: StepOutcome) -> float:
    """Per-tick reward: collision dominates, otherwise lane keeping plus a
    small steering cost."""
    if outcome.collided:
        return config.reward_collision
    r = config.reward_lane_departed if outcome.lane_departed else config.reward_alive
    if action in (Action.STEER_LEFT, Action.STEER_RIGHT):
        r += config.reward_steering
    return r


def build_qnet(config: AgentConfig, rng: np.random.Generator) -> Mlp:
    """Fresh Q-network: ReLU hidden stack, linear Q-value head."""
    dims = (STATE_DIM, *config.hidden_dims, N_ACTIONS)
    acts = tuple([Activation.RELU] * len(config.hidden_dims) + [Activation.LINEAR])
    return init_mlp(dims, acts, rng)


def greedy_action(qnet: Mlp, state: np.ndarray) -> int:
    return int(np.argmax(mlp_forward(qnet, state)))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _estimator_for(
    scenario: EpisodeConfig, estimator: Optional[DrivingStateEstimator]
) -> DrivingStateEstimator:
    if estimator is None:
        return DrivingStateEstimator(dt=scenario.dt)
    if estimator.dt != scenario.dt:
        raise ConfigurationError(
            f"estimator dt {estimator.dt} does not match scenario dt {scenario.dt}"
        )
    return estimator


@dataclass(frozen=True)
class EpisodeRecord:
    """One convergence-curve row."""

    episode: int
    weather: str
    cumulative_reward: float
    epsilon: float
    collided: bool
    ticks: int


@dataclass
class TrainResult:
    qnet: Mlp
    history: List[EpisodeRecord]


def _run_sensed_episode(
    qnet: Optional[Mlp],
    scenario: EpisodeConfig,
    weather: WeatherCondition,
    episode_seed: int,
    sensors: Sequence[SensorSpec],
    estimator: DrivingStateEstimator,
    config: AgentConfig,
    policy_rng: Optional[np.random.Generator],
    learner: Optional[dict] = None,
) -> Tuple[List[float], bool, int]:
    """Shared episode driver for training and evaluation.

    With `learner` set (train mode) transitions are stored and train_step
    runs on schedule; with qnet=None actions are uniform random from
    policy_rng; with qnet set and policy_rng=None the policy is greedy.
    """
    cfg = replace(scenario, weather=weather)
    world = spawn_scenario(cfg, episode_seed)
    est = estimator.reset(cfg.v0)
    est = estimator.step(est, [sense(sp, world) for sp in sensors], world.ego.v)
    state = state_vector(est, weather)

    rewards: List[float] = []
    collided = False
    while not world.done:
        if learner is not None:
            eps = epsilon_at(config, learner["tick"])
            a_idx = select_action(mlp_forward(qnet, state), eps, learner["rng"])
        elif qnet is None:
            a_idx = int(policy_rng.integers(N_ACTIONS))
        else:
            a_idx = greedy_action(qnet, state)

        world, outcome = step_world(world, ACTIONS[a_idx])
        est = estimator.step(est, [sense(sp, world) for sp in sensors], world.ego.v)
        next_state = state_vector(est, weather)
        r = reward_for(config, ACTIONS[a_idx], outcome)
        rewards.append(r)
        collided = collided or outcome.collided

        if learner is not None:
            # timeouts are truncations, not terminals: keep the bootstrap
            learner["buffer"].add(
                Transition(state, a_idx, r, next_state, outcome.collided)
            )
            learner["tick"] += 1
            if (
                len(learner["buffer"]) >= config.min_replay
                and learner["tick"] % config.train_every == 0
            ):
                train_step(
                    qnet, learner["target"], learner["buffer"].sample(config.batch_size), config
                )
                learner["steps"] += 1
                if learner["steps"] % config.target_sync_interval == 0:
                    learner["target"] = qnet.copy()
        state = next_state
    return rewards, collided, world.tick


def train_agent(
    scenario: EpisodeConfig,
    config: AgentConfig,
    episodes: int,
    seed: int,
    weathers: Optional[Sequence[WeatherCondition]] = None,
    sensors: Optional[Sequence[SensorSpec]] = None,
    estimator: Optional[DrivingStateEstimator] = None,
) -> TrainResult:
    """Train a DQN over sensed-and-fused episodes, rotating weather.

    Returns the trained network and the per-episode convergence curve;
    identical arguments reproduce both exactly.
    """
    scenario.validate()
    config.validate()
    if episodes < 0:
        raise ConfigurationError(f"episodes must be >= 0, got {episodes}")
    if weathers is None:
        weathers = default_training_weathers()
    if sensors is None:
        sensors = default_sensor_suite()
    estimator = _estimator_for(scenario, estimator)

    qnet = build_qnet(config, np.random.default_rng(derive_seed(seed, 0)))
    learner = {
        "target": qnet.copy(),
        "buffer": ReplayBuffer(config.replay_capacity, derive_seed(seed, 2)),
        "rng": np.random.default_rng(derive_seed(seed, 1)),
        "tick": 0,
        "steps": 0,
    }

    history: List[EpisodeRecord] = []
    for ep in range(episodes):
        weather = weathers[ep % len(weathers)]
        rewards, collided, ticks = _run_sensed_episode(
            qnet,
            scenario,
            weather,
            derive_seed(seed, 3, ep),
            sensors,
            estimator,
            config,
            policy_rng=None,
            learner=learner,
        )
        history.append(
            EpisodeRecord(
                episode=ep,
                weather=weather.kind.value,
                cumulative_reward=cumulative_reward(
                    rewards, config.gamma, config.discount_convention
                ),
                epsilon=epsilon_at(config, learner["tick"]),
                collided=collided,
                ticks=ticks,
            )
        )
    return TrainResult(qnet=qnet, history=history)


# ---------------------------------------------------------------------------
# frozen-policy evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluationCell:
    """Greedy (or random) policy outcomes for one weather."""

    weather: str
    episodes: int
    collisions: int
    collision_rate_pct: float
    mean_cumulative_reward: float
    mean_ticks: float


def evaluate_policy(
    qnet: Optional[Mlp],
    scenario: EpisodeConfig,
    episodes_per_weather: int,
    seed: int,
    weathers: Optional[Sequence[WeatherCondition]] = None,
    sensors: Optional[Sequence[SensorSpec]] = None,
    config: Optional[AgentConfig] = None,
    estimator: Optional[DrivingStateEstimator] = None,
) -> Dict[str, EvaluationCell]:
    """Run the frozen policy (uniform random when qnet is None) through
    sensed episodes, per weather.

    Episode seeds depend only on (seed, weather, index), so two policies
    evaluated with the same seed face identical scenarios.
    """
    scenario.validate()
    if episodes_per_weather < 1:
        raise ConfigurationError(
            f"episodes_per_weather must be >= 1, got {episodes_per_weather}"
        )
    if weathers is None:
        weathers = default_training_weathers()
    if sensors is None:
        sensors = default_sensor_suite()
    if config is None:
        config = AgentConfig()
    estimator = _estimator_for(scenario, estimator)

    out: Dict[str, EvaluationCell] = {}
    for wi, weather in enumerate(weathers):
        collisions = 0
        total_reward = 0.0
        total_ticks = 0
        for i in range(episodes_per_weather):
            policy_rng = (
                np.random.default_rng(derive_seed(seed, 20, wi, i))
                if qnet is None
                else None
            )
            rewards, collided, ticks = _run_sensed_episode(
                qnet,
                scenario,
                weather,
                derive_seed(seed, 10, wi, i),
                sensors,
                estimator,
                config,
                policy_rng=policy_rng,
            )
            collisions += int(collided)
            total_reward += cumulative_reward(
                rewards, config.gamma, config.discount_convention
            )
            total_ticks += ticks
        out[weather.kind.value] = EvaluationCell(
            weather=weather.kind.value,
            episodes=episodes_per_weather,
            collisions=collisions,
            collision_rate_pct=100.0 * collisions / episodes_per_weather,
            mean_cumulative_reward=total_reward / episodes_per_weather,
            mean_ticks=total_ticks / episodes_per_weather,
        )
    return out
