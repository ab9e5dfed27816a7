"""Sparse event-based visual odometry on synthetic scenes.

Event streams are voxelized into 5-bin time grids, scored, and sparsely
sampled into tracked patches; a sliding-window bundle adjustment turns the
refined patch flows into camera poses. Includes an event simulator with
ground truth, trajectory metrics, and a CLI (`eventvo`).
"""

from .ba import BAConfig, BAProblem, SolveReport, residuals_and_jacobians, schur_solve, solve
from .config import (
    ConfigError,
    RunConfig,
    SceneConfig,
    load_run_config,
    load_scene_config,
    run_config_from_dict,
    scene_config_from_dict,
)
from .events import (
    EVENT_DTYPE,
    empty_events,
    make_events,
    read_events_text,
    validate_events,
    write_events_text,
)
from .geometry import CameraIntrinsics, Pose, retract, se3_exp, se3_log
from .losses import (
    EdgeLossInputs,
    flow_loss,
    pose_loss,
    score_loss,
    total_loss,
)
from .metrics import (
    AlignmentError,
    MetricReport,
    ate_rmse_cm,
    evaluate_trajectories,
    mean_position_error_pct,
    rotation_rmse_deg,
    umeyama_sim3,
)
from .pipeline import (
    PipelineError,
    RunResult,
    ablate,
    derive_rng,
    run_trials,
    run_vo,
    simulate_scene_events,
)
from .sampling import STRATEGIES, SamplerConfig, SamplingError, sample_coordinates
from .scene import (
    CameraPath,
    GroundTruthBundle,
    SyntheticScene,
    downward_orbit_path,
    render_scene,
    smooth_noise_texture,
)
from .scorer import (
    ScorerWeights,
    gradient_scorer,
    init_scorer_weights,
    scorer_backward,
    scorer_forward,
)
from .simulate import FrameSequence, SimConfig, generate_events, randomize_thresholds
from .tracking import (
    Edge,
    Patch,
    PatchGraph,
    TrackerConfig,
    WindowState,
    compute_gt_flow,
    flow_refine,
    keyframe_decision,
    refine_flow_batch,
)
from .trajectory import Trajectory, associate, read_trajectory, write_trajectory
from .voxel import (
    AugmentParams,
    VoxelGrid,
    build_voxel_grid,
    normalize,
    photometric_augment,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "AugmentParams",
    "BAConfig",
    "BAProblem",
    "CameraIntrinsics",
    "CameraPath",
    "ConfigError",
    "Edge",
    "EdgeLossInputs",
    "EVENT_DTYPE",
    "FrameSequence",
    "GroundTruthBundle",
    "MetricReport",
    "Patch",
    "PatchGraph",
    "PipelineError",
    "Pose",
    "RunConfig",
    "RunResult",
    "SamplerConfig",
    "SamplingError",
    "SceneConfig",
    "ScorerWeights",
    "SimConfig",
    "SolveReport",
    "STRATEGIES",
    "SyntheticScene",
    "TrackerConfig",
    "Trajectory",
    "VoxelGrid",
    "WindowState",
    "ablate",
    "associate",
    "ate_rmse_cm",
    "build_voxel_grid",
    "compute_gt_flow",
    "derive_rng",
    "downward_orbit_path",
    "empty_events",
    "evaluate_trajectories",
    "flow_loss",
    "flow_refine",
    "generate_events",
    "gradient_scorer",
    "init_scorer_weights",
    "keyframe_decision",
    "load_run_config",
    "load_scene_config",
    "make_events",
    "mean_position_error_pct",
    "normalize",
    "photometric_augment",
    "pose_loss",
    "randomize_thresholds",
    "read_events_text",
    "read_trajectory",
    "refine_flow_batch",
    "render_scene",
    "residuals_and_jacobians",
    "retract",
    "rotation_rmse_deg",
    "run_config_from_dict",
    "run_trials",
    "run_vo",
    "sample_coordinates",
    "scene_config_from_dict",
    "schur_solve",
    "score_loss",
    "scorer_backward",
    "scorer_forward",
    "se3_exp",
    "se3_log",
    "simulate_scene_events",
    "smooth_noise_texture",
    "solve",
    "total_loss",
    "umeyama_sim3",
    "validate_events",
    "write_events_text",
    "write_trajectory",
]
