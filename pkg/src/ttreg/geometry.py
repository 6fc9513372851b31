"""Rigid-body transforms on SE(3) and the machinery to optimize over them.

Twists (local coordinates of SE(3) around the identity) are plain
6-vectors ordered rotation-first: ``xi = (omega, v)`` with ``omega`` in
radians and ``v`` in meters. This ordering fixes the column layout of
every Jacobian in the registration solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_float_array, as_points, as_vector3

__all__ = [
    "Pose",
    "align_known_correspondences",
    "exp_se3",
    "hat",
    "pose_error",
    "retract",
    "sample_perturbation",
]

_ORTHONORMALITY_TOL = 1e-9
_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Pose:
    """Rotation + translation; the rotation must be a proper orthonormal matrix."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = as_float_array(self.rotation, "rotation")
        t = as_vector3(self.translation, "translation")
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHONORMALITY_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHONORMALITY_TOL:
            raise ValueError("rotation determinant must be +1 (no reflections)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def transform(self, points) -> np.ndarray:
        """Apply to an (n, 3) point array (or a single (3,) point)."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        out = as_points(pts) @ self.rotation.T + self.translation
        return out[0] if single else out


def hat(omega) -> np.ndarray:
    """Skew-symmetric matrix such that hat(w) @ x == cross(w, x)."""
    w = as_vector3(omega, "omega")
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def exp_se3(xi) -> Pose:
    """Exponential map from a twist to a pose.

    Rodrigues' formula for the rotation and the closed-form V matrix for
    the translation; below ``|omega| = 1e-8`` the trigonometric
    coefficients switch to their series limits to avoid 0/0.
    """
    v6 = as_float_array(xi, "twist")
    if v6.shape != (6,):
        raise ValueError(f"twist must have shape (6,), got {v6.shape}")
    omega, v = v6[:3], v6[3:]
    theta = float(np.linalg.norm(omega))
    k = hat(omega)
    k2 = k @ k
    if theta < _SMALL_ANGLE:
        a, b, c = 1.0, 0.5, 1.0 / 6.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
        c = (theta - np.sin(theta)) / theta**3
    rotation = np.eye(3) + a * k + b * k2
    v_mat = np.eye(3) + b * k + c * k2
    return Pose(rotation, v_mat @ v)


def retract(pose: Pose, xi) -> Pose:
    """Take a local step: exp(xi) composed on the left of the pose."""
    return exp_se3(xi) @ pose


def pose_error(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """Geodesic rotation angle (radians) and translation distance (meters)."""
    cos_angle = (np.trace(estimate.rotation.T @ truth.rotation) - 1.0) / 2.0
    rot_err = float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))
    trans_err = float(np.linalg.norm(estimate.translation - truth.translation))
    return rot_err, trans_err


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    while True:
        u = rng.standard_normal(3)
        n = np.linalg.norm(u)
        if n > 1e-12:
            return u / n


def sample_perturbation(
    trans_mag: float, rot_mag: float, rng: np.random.Generator
) -> Pose:
    """Random pose offset with exact translation and rotation magnitudes.

    Directions are uniform on the unit sphere (translation direction and
    rotation axis drawn independently, in that order).
    """
    if trans_mag < 0 or rot_mag < 0:
        raise ValueError("perturbation magnitudes must be >= 0")
    t_dir = _unit_vector(rng)
    axis = _unit_vector(rng)
    rotation = exp_se3(np.concatenate([rot_mag * axis, np.zeros(3)])).rotation
    return Pose(rotation, trans_mag * t_dir)


def align_known_correspondences(src, dst) -> Pose:
    """Least-squares rigid alignment of paired point sets.

    SVD of the cross-covariance between centered clouds, with the
    determinant sign corrected so the result is a rotation, minimizes
    ``sum ||T(src_i) - dst_i||^2`` globally. Needs >= 3 non-collinear
    pairs.
    """
    p = as_points(src, "src")
    q = as_points(dst, "dst")
    if p.shape != q.shape:
        raise ValueError(f"point counts differ: {p.shape[0]} vs {q.shape[0]}")
    if p.shape[0] < 3:
        raise ValueError("need at least 3 point pairs")
    cp = p.mean(axis=0)
    cq = q.mean(axis=0)
    cross_cov = (p - cp).T @ (q - cq)
    u, s, vt = np.linalg.svd(cross_cov)
    if s[1] <= max(p.shape[0], 3) * np.finfo(np.float64).eps * max(s[0], 1e-300):
        raise ValueError("degenerate configuration: points are (nearly) collinear")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(rotation, cq - rotation @ cp)
