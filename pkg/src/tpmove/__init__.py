"""Multi-frame probabilistic movement learning.

Demonstrated trajectories are projected into task frames, encoded there by
local Gaussian mixtures, and reproduced by fusing per-frame regressions
with (optionally confidence-weighted) products of Gaussians. Frame
parameters can be optimized by episodic stochastic search against
joint-space, obstacle, and via-point costs on a simulated serial arm, and
relevant frames can be picked by greedy forward search.
"""

from .arm import (
    ArmModel,
    CostSpec,
    Obstacle,
    cost_joint,
    cost_obstacle,
    cost_via_point,
    fk_path,
    forward_kinematics,
    jacobian,
    min_edge_distance,
    plane_intersection,
    polyline_crosses_rectangle,
    solve_position,
    track,
)
from .demos import (
    DemoSpec,
    endpoint_frames,
    frames_at_times,
    generate_pick_place,
    generate_reaching,
    load_demos,
    minimum_jerk_profile,
    save_demos,
)
from .frames import (
    Demonstration,
    FrameAdjustment,
    LocalModel,
    TaskFrame,
    adjust_frame,
    dual_model_transform,
    fit_local_models,
    frame_from_dict,
    frame_to_dict,
    local_trajectory,
    planar_rotation,
    project,
    reproduce,
    reproduce_moments,
    rotation_from_angles,
    transform_conditional,
    unproject,
    wrap_angle,
)
from .gaussians import (
    GMM,
    BlockSpec,
    FittedGMM,
    Gaussian,
    affine_transform,
    conditional_moments,
    em_fit,
    gaussian_product,
    gmr_condition,
    log_likelihood,
    weighted_gaussian_product,
)
from .policy import (
    BasisFamily,
    OptimizationProblem,
    OptimizationResult,
    OptimizerConfig,
    Policy,
    Rollout,
    decode_adjustments,
    optimize,
    pi2_update,
    pi2_weights,
    policy_action,
)
from .selection import (
    SelectionReport,
    forward_select,
    mean_search_dim,
    optimize_gmm_means,
)

__version__ = "0.1.0"

__all__ = [
    "ArmModel", "CostSpec", "Obstacle", "cost_joint", "cost_obstacle", "cost_via_point",
    "fk_path", "forward_kinematics", "jacobian", "min_edge_distance", "plane_intersection",
    "polyline_crosses_rectangle", "solve_position", "track",
    "DemoSpec", "endpoint_frames", "frames_at_times", "generate_pick_place",
    "generate_reaching", "load_demos", "minimum_jerk_profile", "save_demos",
    "Demonstration", "FrameAdjustment", "LocalModel", "TaskFrame", "adjust_frame",
    "dual_model_transform", "fit_local_models", "frame_from_dict", "frame_to_dict",
    "local_trajectory", "planar_rotation", "project", "reproduce", "reproduce_moments",
    "rotation_from_angles", "transform_conditional", "unproject", "wrap_angle",
    "GMM", "BlockSpec", "FittedGMM", "Gaussian", "affine_transform", "conditional_moments",
    "em_fit", "gaussian_product", "gmr_condition", "log_likelihood",
    "weighted_gaussian_product",
    "BasisFamily", "OptimizationProblem", "OptimizationResult", "OptimizerConfig",
    "Policy", "Rollout", "decode_adjustments", "optimize", "pi2_update", "pi2_weights",
    "policy_action",
    "SelectionReport", "forward_select", "mean_search_dim", "optimize_gmm_means",
    "__version__",
]
