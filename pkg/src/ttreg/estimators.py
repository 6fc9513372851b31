"""Scikit-learn style estimators wrapping the compression and registration cores.

Both classes follow the usual conventions: hyperparameters live on the
constructor (so ``get_params``/``set_params``/``clone`` work), fitted
state lands in trailing-underscore attributes, and array inputs pass
through validation at the boundary.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .geometry import Pose
from .registration import (
    CompressedSDF,
    RegistrationConfig,
    register,
    register_dense,
)
from .tensor_train import TTBuildSpec, tt_element_count, tt_reconstruct, tt_svd
from .validation import as_grid_values, as_points
from .volume import DenseVolume

__all__ = ["PointToSDFRegistration", "TensorTrainCompressor"]


class TensorTrainCompressor(BaseEstimator):
    """Lossy low-rank compression of 3D scalar grids.

    ``fit(X)`` decomposes a 3D array (or :class:`DenseVolume`) into
    tensor-train cores under the configured rank cap / tolerance;
    ``transform(X)`` returns the low-rank reconstruction of its input
    built under the same policy, so it acts as a stateless low-rank
    filter and ``fit_transform`` round-trips the fitted grid.

    Attributes after ``fit``: ``tt_`` (the train), ``ranks_``, ``dims_``,
    ``error_bound_`` (Frobenius bound from the discarded spectrum) and
    ``compression_ratio_`` (dense elements / stored elements).
    """

    def __init__(
        self,
        max_rank: int | None = None,
        rel_tolerance: float | None = 0.0,
        rank_cap_wins: bool = True,
    ):
        self.max_rank = max_rank
        self.rel_tolerance = rel_tolerance
        self.rank_cap_wins = rank_cap_wins

    def _spec(self) -> TTBuildSpec:
        return TTBuildSpec(
            max_rank=self.max_rank,
            rel_tolerance=self.rel_tolerance,
            rank_cap_wins=self.rank_cap_wins,
        )

    @staticmethod
    def _values(X) -> np.ndarray:
        if isinstance(X, DenseVolume):
            return X.values
        return as_grid_values(X, "X")

    def fit(self, X, y=None):
        values = self._values(X)
        self.tt_ = tt_svd(values, self._spec())
        self.dims_ = self.tt_.dims
        self.ranks_ = self.tt_.ranks
        self.error_bound_ = self.tt_.truncation_bound
        self.compression_ratio_ = values.size / tt_element_count(
            self.tt_.dims, self.tt_.ranks
        )
        return self

    def transform(self, X) -> np.ndarray:
        values = self._values(X)
        tt = tt_svd(values, self._spec())
        return tt_reconstruct(tt).values

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).reconstruct()

    def reconstruct(self) -> np.ndarray:
        """Dense array reconstructed from the fitted cores."""
        self._check_fitted()
        return tt_reconstruct(self.tt_).values

    def _check_fitted(self) -> None:
        if not hasattr(self, "tt_"):
            raise NotFittedError("call fit before using this estimator")


class PointToSDFRegistration(BaseEstimator):
    """Rigid alignment of a point cloud to a signed distance map.

    The map (a :class:`CompressedSDF` or a dense SDF
    :class:`DenseVolume`) and the solver settings are hyperparameters;
    ``fit(X)`` estimates the pose taking the (n, 3) points onto the
    map's zero level set, and ``predict``/``transform`` apply that pose
    to new points. ``score`` returns the negative mean squared map value
    at the aligned points (0 is a perfect fit).

    Attributes after ``fit``: ``pose_``, ``rotation_``, ``translation_``,
    ``converged_``, ``n_iter_``, ``final_cost_`` and ``trace_``.
    """

    def __init__(
        self,
        sdf_map=None,
        initial_pose: Pose | None = None,
        max_iterations: int = 50,
        step_scale: float = 1.0,
        convergence_threshold: float = 1e-4,
        levenberg_damping: float = 1e-6,
        oob_policy: str = "drop",
    ):
        self.sdf_map = sdf_map
        self.initial_pose = initial_pose
        self.max_iterations = max_iterations
        self.step_scale = step_scale
        self.convergence_threshold = convergence_threshold
        self.levenberg_damping = levenberg_damping
        self.oob_policy = oob_policy

    def _config(self) -> RegistrationConfig:
        return RegistrationConfig(
            max_iterations=self.max_iterations,
            step_scale=self.step_scale,
            convergence_threshold=self.convergence_threshold,
            levenberg_damping=self.levenberg_damping,
            oob_policy=self.oob_policy,
        )

    def fit(self, X, y=None):
        if self.sdf_map is None:
            raise ValueError("sdf_map must be set before fitting")
        points = as_points(X, "X")
        initial = self.initial_pose or Pose.identity()
        if isinstance(self.sdf_map, CompressedSDF):
            result = register(points, self.sdf_map, initial, self._config())
        elif isinstance(self.sdf_map, DenseVolume):
            result = register_dense(points, self.sdf_map, initial, self._config())
        else:
            raise TypeError(
                f"sdf_map must be CompressedSDF or DenseVolume, got {type(self.sdf_map).__name__}"
            )
        self.result_ = result
        self.pose_ = result.pose
        self.rotation_ = result.pose.rotation
        self.translation_ = result.pose.translation
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        self.final_cost_ = result.final_cost
        self.trace_ = result.trace
        return self

    def predict(self, X) -> np.ndarray:
        """Points mapped through the estimated pose."""
        self._check_fitted()
        return self.pose_.transform(as_points(X, "X"))

    transform = predict

    def score(self, X, y=None) -> float:
        """Negative mean squared map value over the aligned in-bounds points."""
        from .registration import sample

        self._check_fitted()
        aligned = self.predict(X)
        if isinstance(self.sdf_map, CompressedSDF):
            values, _, inbounds = sample(self.sdf_map, aligned)
            values = values[inbounds]
        else:
            idx, inbounds = self.sdf_map.world_to_index(aligned)
            values = self.sdf_map.value_at(idx[inbounds])
        if values.size == 0:
            return -np.inf
        return float(-np.mean(values**2))

    def _check_fitted(self) -> None:
        if not hasattr(self, "pose_"):
            raise NotFittedError("call fit before using this estimator")
