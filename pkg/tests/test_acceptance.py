"""End-to-end acceptance suite.

Each class checks one release gate: numeric equivalence against closed
forms, distributional behaviour of the policy, convergence of training,
the edge-versus-cloud deployment comparison, compression tolerances,
deterministic artifacts, and metric correctness against brute-force
oracles.  The expensive training run is shared through session fixtures.
"""

import json
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
import shapely.geometry

from edgedrive.agent import (
    AgentConfig,
    Transition,
    build_qnet,
    evaluate_policy,
    select_action,
    tabular_q_update,
    train_step,
)
from edgedrive.benchmark import (
    DeploymentMode,
    DetectionCounts,
    LatencyModel,
    ModeKind,
    camera_fusion_weight,
    compute_accuracy,
    compute_collision_rate,
    compute_lane_departure_rate,
    fusion_rmse_experiment,
    run_benchmark,
    run_pipeline_episode,
)
from edgedrive.cli import EXIT_OK, main
from edgedrive.fusion import (
    GaussianEstimate,
    ObservationModel,
    ekf_update,
    kalman_update,
    scalar_observation,
)
from edgedrive.nn import (
    Activation,
    DenseLayer,
    Mlp,
    gradient_check,
    gradient_check_cell,
    init_cell,
    init_mlp,
    mlp_forward,
    prune_by_magnitude,
    quantize_mlp,
    quantized_mlp_forward,
)
from edgedrive.perception import compute_iou, synthetic_patches
from edgedrive.simulation import EpisodeConfig, WeatherCondition, WeatherKind

WEATHER_ORDER = ("clear", "fog", "rain", "snow")


def all_weathers():
    return tuple(
        WeatherCondition(k, 0.0 if k is WeatherKind.CLEAR else 1.0)
        for k in WeatherKind
    )


class TestFusionClosedForm:
    def test_kalman_update_matches_gaussian_product_in_bulk(self):
        rng = np.random.default_rng(1001)
        start = time.perf_counter()

        worst = 0.0
        for _ in range(10_000):
            mean = rng.uniform(-50.0, 50.0)
            var = rng.uniform(0.1, 25.0)
            z = rng.uniform(-50.0, 50.0)
            r = rng.uniform(0.1, 25.0)
            est = GaussianEstimate(mean=np.array([mean]), cov=np.array([[var]]))
            post = kalman_update(est, np.array([z]), scalar_observation(0, r, dim=1))
            precision = 1.0 / var + 1.0 / r
            expected_var = 1.0 / precision
            expected_mean = (mean / var + z / r) * expected_var
            worst = max(
                worst,
                abs(post.mean[0] - expected_mean),
                abs(post.cov[0, 0] - expected_var),
            )
        assert worst < 1e-9

        worst_linear = 0.0
        for _ in range(1_000):
            n = int(rng.integers(2, 5))
            m = int(rng.integers(1, n + 1))
            mean = rng.normal(size=n)
            base = rng.normal(size=(n, n))
            cov = base @ base.T + n * np.eye(n)
            a = rng.normal(size=(m, n))
            b = rng.normal(size=m)
            noise = rng.normal(size=(m, m))
            r_mat = noise @ noise.T + m * np.eye(m)
            z = rng.normal(size=m)
            est = GaussianEstimate(mean=mean, cov=cov)
            lin = kalman_update(est, z - b, ObservationModel(R=r_mat, H=a))
            ext = ekf_update(
                est,
                z,
                ObservationModel(
                    R=r_mat, h=lambda x: a @ x + b, jacobian=lambda x: a
                ),
            )
            worst_linear = max(
                worst_linear,
                float(np.max(np.abs(lin.mean - ext.mean))),
                float(np.max(np.abs(lin.cov - ext.cov))),
            )
        assert worst_linear < 1e-12
        assert time.perf_counter() - start < 10.0


def well_posed_input(model, rng, shape, margin=1e-2):
    """An input whose rectifier pre-activations all sit away from zero.

    Finite differences are only meaningful where the loss is
    differentiable; a hinge within the probe step would make the numeric
    slope an average across the kink.
    """
    from edgedrive.nn import mlp_forward_cached

    while True:
        x = rng.normal(size=shape)
        _, cache = mlp_forward_cached(model, x)
        mins = [
            np.abs(z).min()
            for layer, (_, z, _) in zip(model.layers, cache)
            if layer.activation is Activation.RELU
        ]
        if min(mins) > margin:
            return x


class TestGradientFidelity:
    def test_backprop_matches_finite_differences_across_seeds(self):
        start = time.perf_counter()
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)

            dense = init_mlp((6, 8, 3), (Activation.RELU, Activation.LINEAR), rng)
            x = well_posed_input(dense, rng, (4, 6))
            target = rng.normal(size=(4, 3))
            worst = max(worst, gradient_check(dense, x, target, eps=1e-3))

            cell = init_cell(3, 4, rng)
            h0 = rng.normal(size=4)
            xs = rng.normal(size=(5, 3))
            target = rng.normal(size=4)
            worst = max(worst, gradient_check_cell(cell, h0, xs, target))

            qnet = build_qnet(AgentConfig(), rng)
            x = well_posed_input(qnet, rng, (4, 8))
            target = rng.normal(size=(4, 5))
            worst = max(worst, gradient_check(qnet, x, target, eps=1e-3))
        assert worst < 1e-5
        assert time.perf_counter() - start < 30.0


class TestExplorationDistribution:
    def test_action_frequencies_match_the_policy_law(self):
        start = time.perf_counter()
        q = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        n_actions = q.size
        draws = 100_000
        for epsilon in (0.0, 0.1, 0.5, 1.0):
            rng = np.random.default_rng(9000 + int(epsilon * 10))
            counts = np.zeros(n_actions)
            for _ in range(draws):
                counts[select_action(q, epsilon, rng)] += 1
            freq = counts / draws
            expected = np.full(n_actions, epsilon / n_actions)
            expected[2] = 1.0 - epsilon + epsilon / n_actions
            assert np.max(np.abs(freq - expected)) <= 0.01
        assert time.perf_counter() - start < 5.0


def chain_mdp_step(s, a):
    """Deterministic 5-state chain: forward reaches the terminal state 4
    with reward 1, backward walks toward state 0."""
    if a == 1:
        s_next = s + 1
    else:
        s_next = max(0, s - 1)
    reward = 1.0 if s_next == 4 else 0.0
    return s_next, reward, s_next == 4


def chain_mdp_value_iteration(gamma, tol=1e-13):
    q = np.zeros((5, 2))
    for _ in range(10_000):
        new = np.zeros_like(q)
        for s in range(4):
            for a in range(2):
                s_next, reward, done = chain_mdp_step(s, a)
                bootstrap = 0.0 if done else gamma * np.max(q[s_next])
                new[s, a] = reward + bootstrap
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
    raise AssertionError("value iteration did not converge")


class TestFixedPointConsistency:
    GAMMA = 0.9

    def test_tabular_updates_reach_the_value_iteration_solution(self):
        oracle = chain_mdp_value_iteration(self.GAMMA)
        table = np.zeros((5, 2))
        rng = np.random.default_rng(404)
        for _ in range(40_000):
            s = int(rng.integers(4))
            a = int(rng.integers(2))
            s_next, reward, _ = chain_mdp_step(s, a)
            tabular_q_update(table, s, a, reward, s_next, 0.5, self.GAMMA)
        assert np.max(np.abs(table[:4] - oracle[:4])) < 1e-6

    def test_linear_one_hot_network_agrees_with_the_table(self):
        oracle = chain_mdp_value_iteration(self.GAMMA)
        transitions = []
        eye = np.eye(5)
        for s in range(4):
            for a in range(2):
                s_next, reward, done = chain_mdp_step(s, a)
                transitions.append(
                    Transition(eye[s], a, reward, eye[s_next], done)
                )
        qnet = Mlp(layers=[DenseLayer(weights=np.zeros((2, 5)),
                                      bias=np.zeros(2),
                                      activation=Activation.LINEAR)])
        config = AgentConfig(learning_rate=0.05, gamma=self.GAMMA)
        target = qnet.copy()
        for step in range(6_000):
            if step % 50 == 0:
                target = qnet.copy()
            train_step(qnet, target, transitions, config)
        learned = mlp_forward(qnet, eye)
        assert np.max(np.abs(learned[:4] - oracle[:4])) < 1e-3


class TestTrainingConvergence:
    def test_smoothed_reward_trend_holds_through_the_final_third(
        self, master_training
    ):
        rewards = np.array(
            [r.cumulative_reward for r in master_training.history]
        )
        assert rewards.size == 2000
        window = rewards.size // 10
        smoothed = np.convolve(rewards, np.ones(window) / window, mode="valid")
        final_third = smoothed[smoothed.size * 2 // 3 :]

        # the trend must not give back its gains: the final third ends at
        # least as high as it starts, and no dip within it exceeds a
        # quarter of the curve's full range
        assert final_third[-1] >= final_third[0]
        span = float(smoothed.max() - smoothed.min())
        drawdown = float(np.max(np.maximum.accumulate(final_third) - final_third))
        assert drawdown <= 0.25 * span

    def test_trained_policy_halves_the_random_collision_rate(
        self, master_training, default_scenario, agent_config
    ):
        trained = evaluate_policy(
            master_training.qnet, default_scenario, 200, 0xE7A1,
            config=agent_config,
        )
        baseline = evaluate_policy(
            None, default_scenario, 200, 0xE7A1, config=agent_config,
        )
        assert set(trained) == set(WEATHER_ORDER)
        for weather in WEATHER_ORDER:
            assert trained[weather].collision_rate_pct <= (
                0.5 * baseline[weather].collision_rate_pct
            )

    def test_final_training_episodes_already_beat_random(
        self, master_training, default_scenario, agent_config
    ):
        # even with residual exploration noise, the tail of the training
        # run collides less than half as often as a random policy
        tail = master_training.history[-100:]
        tail_rate = 100.0 * sum(r.collided for r in tail) / len(tail)
        baseline = evaluate_policy(
            None, default_scenario, 200, 0xE7A1, config=agent_config,
        )
        worst_random = min(c.collision_rate_pct for c in baseline.values())
        assert tail_rate <= 0.5 * worst_random


@pytest.fixture(scope="module")
def benchmark_report(master_training, default_scenario):
    report, _ = run_benchmark(
        master_training.qnet,
        default_scenario,
        episodes_per_cell=200,
        master_seed=7,
        threads=4,
    )
    return report


class TestDeploymentComparison:
    def test_episode_conservation(self, benchmark_report):
        assert benchmark_report.total_episodes == 2 * 4 * 200
        assert sum(c.episodes for c in benchmark_report.cells) == 2 * 4 * 200

    def test_cloud_latency_at_least_four_times_edge(self, benchmark_report):
        for weather in WEATHER_ORDER:
            edge = benchmark_report.cell("edge", weather)
            cloud = benchmark_report.cell("cloud", weather)
            assert cloud.mean_latency_ms >= 4.0 * edge.mean_latency_ms

    def test_staleness_never_helps_and_hurts_in_low_visibility(
        self, benchmark_report
    ):
        for weather in WEATHER_ORDER:
            edge = benchmark_report.cell("edge", weather)
            cloud = benchmark_report.cell("cloud", weather)
            assert cloud.collision_rate_pct >= edge.collision_rate_pct
        for weather in ("fog", "snow"):
            edge = benchmark_report.cell("edge", weather)
            cloud = benchmark_report.cell("cloud", weather)
            assert cloud.collision_rate_pct > edge.collision_rate_pct


class TestLatencyMonotonicity:
    def test_collision_rate_never_improves_with_extra_delay(
        self, master_training, default_scenario
    ):
        collisions = []
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
            collided = 0
            for wi, weather in enumerate(all_weathers()):
                scenario = replace(default_scenario, weather=weather)
                for i in range(50):
                    metrics = run_pipeline_episode(
                        mode,
                        scenario,
                        master_training.qnet,
                        100_000 + 1000 * wi + i,
                        perception_interval=10_000,
                    )
                    collided += int(metrics.collided)
            collisions.append(collided)
        assert collisions == sorted(collisions)


class TestFusionBenefit:
    def test_fused_estimate_beats_every_single_sensor_in_bad_weather(
        self, default_scenario
    ):
        weathers = (
            WeatherCondition(WeatherKind.FOG, 1.0),
            WeatherCondition(WeatherKind.SNOW, 1.0),
        )
        cells = fusion_rmse_experiment(
            default_scenario, episodes=500, seed=2027, weathers=weathers
        )
        for name in ("fog", "snow"):
            cell = cells[name]
            assert cell.rmse_fused < cell.best_single_rmse

    def test_camera_weight_drops_when_visibility_does(self):
        clear = camera_fusion_weight(WeatherCondition(WeatherKind.CLEAR))
        fog = camera_fusion_weight(WeatherCondition(WeatherKind.FOG, 1.0))
        assert fog < clear


@pytest.fixture(scope="module")
def holdout():
    return synthetic_patches(3000, np.random.default_rng(777))


class TestCompressionTolerance:
    @staticmethod
    def accuracy_pct(scores, targets):
        labels = (np.asarray(scores).reshape(-1) >= 0.5).astype(float)
        return 100.0 * float(np.mean(labels == targets))

    def test_int8_quantization_keeps_accuracy(self, cell_classifier, holdout):
        x, t = holdout
        base = self.accuracy_pct(mlp_forward(cell_classifier, x), t)
        quantized = self.accuracy_pct(
            quantized_mlp_forward(quantize_mlp(cell_classifier), x), t
        )
        assert abs(base - quantized) <= 2.0

    def test_pruning_reports_its_reduction_and_keeps_accuracy(
        self, cell_classifier, holdout
    ):
        x, t = holdout
        base = self.accuracy_pct(mlp_forward(cell_classifier, x), t)
        pruned, achieved = prune_by_magnitude(cell_classifier, 0.3)
        total = sum(layer.weights.size for layer in cell_classifier.layers)
        assert abs(achieved - 0.3) <= 1.0 / total
        assert self.accuracy_pct(mlp_forward(pruned, x), t) >= base - 5.0


class TestDeterministicOutputs:
    def test_every_command_is_byte_stable_under_reruns(self, tmp_path, capsys):
        def config_for(tag):
            payload = {
                "seed": 11,
                "out_dir": str(tmp_path / tag),
                "scenario": {"max_ticks": 40},
                "agent": {
                    "min_replay": 8,
                    "batch_size": 8,
                    "hidden_dims": [8],
                    "epsilon_decay_ticks": 200,
                },
                "training": {"episodes": 2, "weathers": ["clear"]},
                "evaluation": {"episodes_per_weather": 2, "weathers": ["fog"]},
                "benchmark": {
                    "episodes_per_cell": 1,
                    "modes": ["edge", "cloud"],
                    "weathers": ["clear"],
                    "threads": 2,
                    "perception_interval": 20,
                },
            }
            path = tmp_path / f"{tag}.json"
            path.write_text(json.dumps(payload))
            return path

        outputs = {
            "train": ("model.json", "convergence.csv"),
            "evaluate": ("evaluation.json",),
            "benchmark": ("report.json", "episodes.csv"),
        }
        blobs = {}
        for tag in ("first", "second"):
            config = config_for(tag)
            assert main(["train", "--config", str(config)]) == EXIT_OK
            assert main(["evaluate", "--config", str(config)]) == EXIT_OK
            assert main(
                ["benchmark", "--config", str(config), "--random-policy"]
            ) == EXIT_OK
            blobs[tag] = {
                name: (tmp_path / tag / name).read_bytes()
                for names in outputs.values()
                for name in names
            }
        capsys.readouterr()
        assert blobs["first"] == blobs["second"]


class TestMetricOracles:
    def test_accuracy_matches_brute_force_confusion_counts_exactly(self):
        rng = np.random.default_rng(31_337)
        for _ in range(1_000):
            n = int(rng.integers(1, 60))
            truth = rng.integers(0, 2, size=n)
            predicted = rng.integers(0, 2, size=n)
            tp = fp = fn = tn = 0
            for t, p in zip(truth, predicted):
                if t and p:
                    tp += 1
                elif not t and p:
                    fp += 1
                elif t and not p:
                    fn += 1
                else:
                    tn += 1
            counts = DetectionCounts(tp=tp, fp=fp, fn=fn, tn=tn)
            expected = float(Fraction(100 * (tp + tn), n))
            assert compute_accuracy(counts) == expected

    def test_rates_match_exact_rational_arithmetic(self):
        rng = np.random.default_rng(808)
        for _ in range(1_000):
            n = int(rng.integers(1, 500))
            events = rng.integers(0, 2, size=n)
            k = int(np.sum(events))
            expected = float(Fraction(100 * k, n))
            assert compute_collision_rate(k, n) == expected
            assert compute_lane_departure_rate(k, n) == expected

    def test_iou_matches_exact_rational_geometry_on_integer_boxes(self):
        rng = np.random.default_rng(515)
        for _ in range(500):
            ax0, ay0 = rng.integers(-20, 20, size=2)
            bx0, by0 = rng.integers(-20, 20, size=2)
            aw, ah, bw, bh = rng.integers(1, 15, size=4)
            box_a = (float(ax0), float(ay0), float(ax0 + aw), float(ay0 + ah))
            box_b = (float(bx0), float(by0), float(bx0 + bw), float(by0 + bh))
            w = min(box_a[2], box_b[2]) - max(box_a[0], box_b[0])
            h = min(box_a[3], box_b[3]) - max(box_a[1], box_b[1])
            inter = max(0, int(w)) * max(0, int(h))
            union = int(aw) * int(ah) + int(bw) * int(bh) - inter
            expected = float(Fraction(inter, union))
            assert compute_iou(box_a, box_b) == expected

    def test_iou_matches_polygon_geometry_on_real_boxes(self):
        rng = np.random.default_rng(616)
        for _ in range(500):
            a = rng.uniform(-10.0, 10.0, size=2)
            b = rng.uniform(-10.0, 10.0, size=2)
            wa = rng.uniform(0.05, 8.0, size=2)
            wb = rng.uniform(0.05, 8.0, size=2)
            box_a = (a[0], a[1], a[0] + wa[0], a[1] + wa[1])
            box_b = (b[0], b[1], b[0] + wb[0], b[1] + wb[1])
            poly_a = shapely.geometry.box(*box_a)
            poly_b = shapely.geometry.box(*box_b)
            union = poly_a.union(poly_b).area
            expected = poly_a.intersection(poly_b).area / union
            assert compute_iou(box_a, box_b) == pytest.approx(
                expected, abs=1e-12
            )
