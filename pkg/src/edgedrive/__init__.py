"""Edge-deployed driving pipeline: simulation, weather-aware sensing,
fusion, a from-scratch neural stack, a DQN agent, and an edge-vs-cloud
latency benchmark."""

from .errors import (
    ConfigurationError,
    DegenerateEvidenceError,
    DomainError,
    EdgeDriveError,
    MissingCellError,
    NumericalError,
    ShapeError,
    UndefinedMetricError,
    UsageError,
)
from .simulation import (
    CLEAR,
    Action,
    EpisodeConfig,
    Obstacle,
    StepOutcome,
    VehicleState,
    WeatherCondition,
    WeatherKind,
    WorldState,
    derive_seed,
    detect_collision,
    detect_lane_departure,
    spawn_scenario,
    step_world,
)
from .sensors import (
    Measurement,
    SensorKind,
    SensorSpec,
    default_camera_spec,
    default_lidar_spec,
    default_radar_spec,
    default_sensor_suite,
    degrade_range,
    nearest_obstacle_ahead,
    noise_variance_for,
    sense,
    sense_occupancy,
)
from .fusion import (
    DiscreteBelief,
    DrivingStateEstimator,
    GaussianEstimate,
    ObservationModel,
    TransitionModel,
    bayes_update,
    ekf_update,
    inverse_variance_weights,
    kalman_gain,
    kalman_predict,
    kalman_update,
    numeric_jacobian,
    weighted_fuse,
)
from .nn import (
    Activation,
    DenseLayer,
    Mlp,
    RecurrentCell,
    dense_forward,
    gradient_check,
    gradient_check_cell,
    init_cell,
    init_mlp,
    load_mlp,
    mlp_backward,
    mlp_forward,
    prune_by_magnitude,
    quantize_int8,
    quantize_mlp,
    quantized_forward,
    quantized_mlp_forward,
    rnn_forward,
    rnn_step,
    save_mlp,
    sgd_step,
    squared_error_loss,
)
from .perception import (
    BoundingBox,
    CellLabel,
    Detection,
    DetectionCounts,
    GridGeometry,
    OccupancyGrid,
    classify_cells,
    compute_iou,
    detections_from_grid,
    extract_patches,
    match_detections,
    occupancy_truth,
    temporal_smooth,
    train_cell_classifier,
    truth_boxes,
)
from .agent import (
    ACTIONS,
    AgentConfig,
    EvaluationCell,
    ReplayBuffer,
    TrainResult,
    Transition,
    cumulative_reward,
    epsilon_at,
    evaluate_policy,
    q_target,
    select_action,
    state_vector,
    tabular_q_update,
    train_agent,
    train_step,
)
from .benchmark import (
    BenchmarkReport,
    DeploymentMode,
    EpisodeMetrics,
    LatencyModel,
    ModeKind,
    aggregate_report,
    cloud_mode,
    compute_accuracy,
    compute_collision_rate,
    compute_lane_departure_rate,
    edge_mode,
    fusion_rmse_experiment,
    run_benchmark,
    run_pipeline_episode,
    sample_latency,
)
from .config import RunConfig, default_config, load_run_config

__version__ = "0.1.0"
