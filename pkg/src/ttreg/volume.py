"""Dense voxel grids with world-coordinate mapping and SDF construction.

Grids are cell-centered: ``origin`` is the world position of the center of
voxel (0, 0, 0) and voxel (i, j, k) is centered at ``origin + (i, j, k) *
spacing``. A world point maps to the grid by rounding to the nearest voxel
center; points whose nearest center falls outside the grid are reported as
out of bounds rather than raising.

Signed distance grids follow the convention negative inside the object,
positive outside, in world units (meters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tensor_train import dense_derivative
from .validation import as_float_array, as_grid_values, as_points, as_vector3

__all__ = [
    "Box",
    "DenseVolume",
    "OccupancyGrid",
    "Sphere",
    "SphereUnion",
    "analytic_sdf",
    "nearest_voxel",
    "sample_surface_points",
    "sdf_from_occupancy",
    "truncate",
]


def _as_spacing(spacing) -> np.ndarray:
    h = np.asarray(spacing, dtype=np.float64)
    if h.ndim == 0:
        h = np.full(3, float(h))
    h = as_vector3(h, "spacing")
    if np.any(h <= 0):
        raise ValueError(f"spacing must be positive, got {h}")
    return h


def nearest_voxel(
    points: np.ndarray,
    origin: np.ndarray,
    spacing: np.ndarray,
    dims: tuple[int, int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Round world points to nearest-voxel-center indices.

    Returns ``(indices, inbounds)`` with shapes (n, 3) and (n,). Indices
    of out-of-bounds points are still the nearest-center indices and may
    lie outside [0, dims); callers choose whether to drop or clamp them.
    Half-cell ties round toward the higher index.
    """
    pts = as_points(points)
    u = (pts - origin) / spacing
    idx = np.floor(u + 0.5).astype(np.int64)
    inbounds = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=1)
    return idx, inbounds


@dataclass(frozen=True)
class DenseVolume:
    """Uncompressed cell-centered 3D scalar grid with a world mapping."""

    values: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", as_grid_values(self.values))
        object.__setattr__(self, "origin", as_vector3(self.origin, "origin"))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Outer box of the grid (voxel edges, not centers)."""
        lo = self.origin - 0.5 * self.spacing
        hi = self.origin + (np.asarray(self.dims) - 0.5) * self.spacing
        return lo, hi

    def world_to_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Nearest voxel-center indices for world points; see :func:`nearest_voxel`."""
        return nearest_voxel(points, self.origin, self.spacing, self.dims)

    def index_to_world(self, indices) -> np.ndarray:
        """World coordinates of voxel centers."""
        idx = np.asarray(indices, dtype=np.float64)
        return self.origin + idx * self.spacing

    def value_at(self, indices) -> np.ndarray:
        """Grid values at (n, 3) integer indices."""
        idx = np.asarray(indices)
        return self.values[idx[..., 0], idx[..., 1], idx[..., 2]]


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean voxel grid; needs both occupied and free voxels."""

    occupancy: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray

    def __post_init__(self) -> None:
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3:
            raise ValueError(f"occupancy must be 3D, got ndim={occ.ndim}")
        if occ.all() or not occ.any():
            raise ValueError("occupancy must contain both occupied and free voxels")
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", as_vector3(self.origin, "origin"))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape


def _distance_to(target: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance (meters) from every voxel center to the
    nearest center inside ``target``.

    Uses the exact feature transform and recomputes the distance from the
    returned indices, in integer index space when the spacing is
    isotropic, so results match a brute-force nearest-voxel search
    bit for bit.
    """
    isotropic = spacing[0] == spacing[1] == spacing[2]
    nearest = ndimage.distance_transform_edt(
        ~target,
        sampling=None if isotropic else spacing,
        return_distances=False,
        return_indices=True,
    )
    delta = np.indices(target.shape, dtype=np.int64) - nearest
    if isotropic:
        sq = np.sum(delta * delta, axis=0)
        return spacing[0] * np.sqrt(sq.astype(np.float64))
    scaled = delta.astype(np.float64) * spacing.reshape(3, 1, 1, 1)
    return np.sqrt(np.sum(scaled * scaled, axis=0))


def sdf_from_occupancy(occ: OccupancyGrid) -> DenseVolume:
    """Signed distance grid from occupancy via Euclidean distance transform.

    Free voxels get the distance to the nearest occupied voxel center,
    occupied voxels get minus the distance to the nearest free center,
    both in meters.
    """
    mask = occ.occupancy
    outside = _distance_to(mask, occ.spacing)
    inside = _distance_to(~mask, occ.spacing)
    values = np.where(mask, -inside, outside)
    return DenseVolume(values=values, origin=occ.origin, spacing=occ.spacing)


def truncate(sdf: DenseVolume, mu: float) -> DenseVolume:
    """Clamp a signed distance grid to the band [-mu, +mu]."""
    if mu <= 0:
        raise ValueError(f"truncation distance must be > 0, got {mu}")
    return DenseVolume(
        values=np.clip(sdf.values, -mu, mu), origin=sdf.origin, spacing=sdf.spacing
    )


# ---------------------------------------------------------------------------
# Analytic test fixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")

    def sdf(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        return np.linalg.norm(pts - np.asarray(self.center), axis=1) - self.radius


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.half_extents) <= 0):
            raise ValueError(f"half_extents must be positive, got {self.half_extents}")

    def sdf(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        q = np.abs(pts - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class SphereUnion:
    spheres: tuple[Sphere, ...]

    def __post_init__(self) -> None:
        if not self.spheres:
            raise ValueError("union needs at least one sphere")
        object.__setattr__(self, "spheres", tuple(self.spheres))

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return np.min([s.sdf(points) for s in self.spheres], axis=0)


def analytic_sdf(shape, dims, bounds) -> DenseVolume:
    """Sample an analytic signed distance function on a cell-centered grid.

    ``bounds`` is the world box ``(lo, hi)``; voxel centers are laid out
    half a cell inside it, so the grid tiles the box exactly.
    """
    dims = tuple(int(d) for d in dims)
    lo = as_vector3(bounds[0], "bounds lo")
    hi = as_vector3(bounds[1], "bounds hi")
    if np.any(hi <= lo):
        raise ValueError("bounds hi must exceed lo on every axis")
    spacing = (hi - lo) / np.asarray(dims)
    origin = lo + 0.5 * spacing
    axes = [origin[a] + spacing[a] * np.arange(dims[a]) for a in range(3)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    values = shape.sdf(pts).reshape(dims)
    return DenseVolume(values=values, origin=origin, spacing=spacing)


# ---------------------------------------------------------------------------
# Surface point synthesis
# ---------------------------------------------------------------------------


def _volume_field(vol: DenseVolume):
    grads = [dense_derivative(vol.values, a, vol.spacing[a]) for a in range(3)]

    def field(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx, inbounds = vol.world_to_index(pts)
        idx = np.clip(idx, 0, np.asarray(vol.dims) - 1)
        vals = np.where(inbounds, vol.value_at(idx), np.inf)
        g = np.stack([grads[a][idx[:, 0], idx[:, 1], idx[:, 2]] for a in range(3)], axis=1)
        return vals, g

    return field


def _analytic_field(shape, step: float = 1e-6):
    def field(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals = shape.sdf(pts)
        g = np.empty_like(pts)
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = step
            g[:, a] = (shape.sdf(pts + dp) - shape.sdf(pts - dp)) / (2 * step)
        return vals, g

    return field


def sample_surface_points(
    source,
    count: int,
    rng: np.random.Generator,
    *,
    bounds=None,
    band: float | None = None,
    max_rounds: int = 64,
) -> np.ndarray:
    """Draw world points near the zero level set of a signed distance field.

    Candidates are sampled uniformly in the box, stepped once toward the
    surface along the normalized field gradient (x <- x - f(x) * g/|g|),
    and kept when the field value there is within ``band``. The source is
    either a :class:`DenseVolume` (band defaults to half the voxel
    spacing) or an analytic shape with an ``sdf`` method (``bounds`` and
    ``band`` must then be given).

    Raises ``RuntimeError`` if the surface cannot be hit often enough
    within ``max_rounds`` batches.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if isinstance(source, DenseVolume):
        field = _volume_field(source)
        if bounds is None:
            bounds = source.bounds
        if band is None:
            band = 0.5 * float(np.min(source.spacing))
    else:
        if not hasattr(source, "sdf"):
            raise TypeError(f"unsupported surface source: {type(source).__name__}")
        if bounds is None or band is None:
            raise ValueError("analytic sources need explicit bounds and band")
        field = _analytic_field(source)
    lo = as_vector3(bounds[0], "bounds lo")
    hi = as_vector3(bounds[1], "bounds hi")

    collected: list[np.ndarray] = []
    n_have = 0
    batch = max(4 * count, 1024)
    for _ in range(max_rounds):
        pts = rng.uniform(lo, hi, size=(batch, 3))
        vals, grads = field(pts)
        norms = np.linalg.norm(grads, axis=1)
        ok = np.isfinite(vals) & (norms > 1e-12)
        pts = pts[ok] - (vals[ok] / norms[ok])[:, np.newaxis] * grads[ok]
        vals2, _ = field(pts)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        keep = inside & np.isfinite(vals2) & (np.abs(vals2) <= band)
        if np.any(keep):
            collected.append(pts[keep])
            n_have += int(np.count_nonzero(keep))
        if n_have >= count:
            return np.concatenate(collected, axis=0)[:count]
    raise RuntimeError(
        f"found only {n_have}/{count} surface points after {max_rounds} rounds"
    )
