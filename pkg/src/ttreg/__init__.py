"""Tensor-train compressed signed distance fields and direct point-cloud registration.

The package compresses voxelized signed distance grids into three-core
tensor trains, differentiates them per-core with sparse finite-difference
stencils, and aligns point clouds to the compressed map with Gauss-Newton
steps on SE(3) -- never densifying the grid. Dense-grid counterparts of
every operation double as oracles and baselines.
"""

from .estimators import PointToSDFRegistration, TensorTrainCompressor
from .geometry import (
    Pose,
    align_known_correspondences,
    exp_se3,
    hat,
    pose_error,
    retract,
    sample_perturbation,
)
from .registration import (
    CompressedSDF,
    RegistrationConfig,
    RegistrationError,
    RegistrationResult,
    gauss_newton_step,
    register,
    register_dense,
    sample,
)
from .tensor_train import (
    MemoryBudgetError,
    TensorTrain3,
    TTBuildSpec,
    dense_derivative,
    diff_matrix,
    tt_derivative,
    tt_element_count,
    tt_eval,
    tt_eval_batch,
    tt_memory_bytes,
    tt_reconstruct,
    tt_svd,
)
from .volume import (
    Box,
    DenseVolume,
    OccupancyGrid,
    Sphere,
    SphereUnion,
    analytic_sdf,
    nearest_voxel,
    sample_surface_points,
    sdf_from_occupancy,
    truncate,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "CompressedSDF",
    "DenseVolume",
    "MemoryBudgetError",
    "OccupancyGrid",
    "PointToSDFRegistration",
    "Pose",
    "RegistrationConfig",
    "RegistrationError",
    "RegistrationResult",
    "Sphere",
    "SphereUnion",
    "TTBuildSpec",
    "TensorTrain3",
    "TensorTrainCompressor",
    "align_known_correspondences",
    "analytic_sdf",
    "dense_derivative",
    "diff_matrix",
    "exp_se3",
    "gauss_newton_step",
    "hat",
    "nearest_voxel",
    "pose_error",
    "register",
    "register_dense",
    "retract",
    "sample",
    "sample_perturbation",
    "sample_surface_points",
    "sdf_from_occupancy",
    "truncate",
    "tt_derivative",
    "tt_element_count",
    "tt_eval",
    "tt_eval_batch",
    "tt_memory_bytes",
    "tt_reconstruct",
    "tt_svd",
    "__version__",
]
