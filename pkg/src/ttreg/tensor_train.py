"""Tensor train representation of 3D scalar grids.

A rank-(r1, r2) tensor train stores an N1 x N2 x N3 array as three cores
of shapes (N1, r1), (r1, N2, r2) and (r2, N3), contracted over the rank
indices:

    F[i, j, k] = sum_{a, b} core1[i, a] * core2[a, j, b] * core3[b, k]

Storage drops from N1*N2*N3 scalars to N1*r1 + r1*N2*r2 + r2*N3, and a
single element is recovered in O(r1*r2) multiply-adds, so large grids can
be queried without ever materializing the dense array.

Construction uses sequential truncated SVD on the two unfoldings of the
input array; the discarded singular values give a guaranteed Frobenius
error bound sqrt(sum of discarded sigma^2). First-derivative grids along
any axis are obtained by multiplying a single core with a sparse
finite-difference stencil matrix, which preserves dimensions and ranks.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import sparse

from .validation import as_grid_values

if TYPE_CHECKING:
    from .volume import DenseVolume

__all__ = [
    "MemoryBudgetError",
    "TTBuildSpec",
    "TensorTrain3",
    "dense_derivative",
    "diff_matrix",
    "tt_derivative",
    "tt_element_count",
    "tt_eval",
    "tt_eval_batch",
    "tt_memory_bytes",
    "tt_reconstruct",
    "tt_svd",
]

# Default cap on dense-reconstruction allocations; override with the
# TTREG_MEM_BUDGET environment variable (bytes).
DEFAULT_MEM_BUDGET = 4 << 30

MEM_BUDGET_ENV_VAR = "TTREG_MEM_BUDGET"


class MemoryBudgetError(RuntimeError):
    """Raised when a dense reconstruction would exceed the memory budget."""


def _mem_budget(budget: int | None) -> int:
    if budget is not None:
        return int(budget)
    return int(os.environ.get(MEM_BUDGET_ENV_VAR, DEFAULT_MEM_BUDGET))


@dataclass(frozen=True)
class TTBuildSpec:
    """Truncation policy for building a tensor train.

    Parameters
    ----------
    max_rank : int or None
        Hard cap on both ranks. ``None`` leaves ranks uncapped.
    rel_tolerance : float or None
        Relative Frobenius error target. The budget is split evenly
        between the two unfoldings (``rel_tolerance / sqrt(2)`` each), so
        the combined reconstruction error stays at or below
        ``rel_tolerance * ||F||_F``. ``0.0`` requests a lossless build.
    rank_cap_wins : bool
        With both criteria set, ``True`` (default) keeps ``max_rank`` as a
        hard ceiling even when the tolerance would need a larger rank;
        ``False`` lets the tolerance override the cap.

    At least one of ``max_rank`` and ``rel_tolerance`` must be set.
    """

    max_rank: int | None = None
    rel_tolerance: float | None = None
    rank_cap_wins: bool = True

    def __post_init__(self) -> None:
        if self.max_rank is None and self.rel_tolerance is None:
            raise ValueError("at least one of max_rank, rel_tolerance must be set")
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError(f"max_rank must be >= 1, got {self.max_rank}")
        if self.rel_tolerance is not None and self.rel_tolerance < 0:
            raise ValueError(f"rel_tolerance must be >= 0, got {self.rel_tolerance}")

    @classmethod
    def lossless(cls) -> TTBuildSpec:
        """Spec that reproduces the input to double-precision accuracy."""
        return cls(max_rank=None, rel_tolerance=0.0)


@dataclass(frozen=True)
class TensorTrain3:
    """Three-core tensor train of a 3D scalar grid.

    ``truncation_bound`` is advisory build metadata: the Frobenius-norm
    error bound sqrt(sum of discarded sigma^2) recorded by :func:`tt_svd`
    (``None`` for trains assembled from raw cores).
    """

    core1: np.ndarray
    core2: np.ndarray
    core3: np.ndarray
    truncation_bound: float | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        c1 = np.asarray(self.core1, dtype=np.float64)
        c2 = np.asarray(self.core2, dtype=np.float64)
        c3 = np.asarray(self.core3, dtype=np.float64)
        object.__setattr__(self, "core1", c1)
        object.__setattr__(self, "core2", c2)
        object.__setattr__(self, "core3", c3)
        if c1.ndim != 2 or c2.ndim != 3 or c3.ndim != 2:
            raise ValueError(
                "cores must have shapes (N1, r1), (r1, N2, r2), (r2, N3); got "
                f"{c1.shape}, {c2.shape}, {c3.shape}"
            )
        if c1.shape[1] != c2.shape[0] or c2.shape[2] != c3.shape[0]:
            raise ValueError(
                f"inconsistent rank dimensions: {c1.shape}, {c2.shape}, {c3.shape}"
            )
        n1, r1 = c1.shape
        _, n2, r2 = c2.shape
        n3 = c3.shape[1]
        if r1 > min(n1, n2 * n3) or r2 > min(n1 * n2, n3):
            raise ValueError(
                f"ranks ({r1}, {r2}) exceed the SVD bounds for dims ({n1}, {n2}, {n3})"
            )
        for name, core in (("core1", c1), ("core2", c2), ("core3", c3)):
            if not np.all(np.isfinite(core)):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.core1.shape[0], self.core2.shape[1], self.core3.shape[1])

    @property
    def ranks(self) -> tuple[int, int]:
        return (self.core1.shape[1], self.core2.shape[2])

    def __repr__(self) -> str:
        return f"TensorTrain3(dims={self.dims}, ranks={self.ranks})"


def _truncation_rank(
    sigma: np.ndarray, spec: TTBuildSpec, norm_f: float
) -> tuple[int, float]:
    """Pick the kept rank for one unfolding and the discarded energy.

    Singular values at the double-precision noise floor (relative to the
    largest) are always discardable, so exactly separable inputs collapse
    to rank 1 even under a lossless spec. Returns ``(rank, sum of
    discarded sigma^2)``.
    """
    m = len(sigma)
    if m == 0:
        return 1, 0.0
    floor = m * np.finfo(np.float64).eps * sigma[0]
    noise_rank = int(np.count_nonzero(sigma > floor))
    rank = max(noise_rank, 1)

    if spec.rel_tolerance is not None:
        # Smallest rank whose discarded tail fits in this unfolding's share
        # of the squared error budget.
        budget_sq = (spec.rel_tolerance * norm_f) ** 2 / 2.0
        tail = np.cumsum(sigma[::-1] ** 2)[::-1]  # tail[k] = sum_{i>=k} sigma_i^2
        tol_rank = m
        while tol_rank > 1 and tail[tol_rank - 1] <= budget_sq:
            tol_rank -= 1
        rank = max(min(rank, tol_rank), 1)
        if spec.max_rank is not None and spec.rank_cap_wins:
            rank = min(rank, spec.max_rank)
    elif spec.max_rank is not None:
        rank = min(rank, spec.max_rank)

    discarded = float(np.sum(sigma[rank:] ** 2))
    return rank, discarded


def tt_svd(volume: DenseVolume | np.ndarray, spec: TTBuildSpec) -> TensorTrain3:
    """Build a tensor train from a dense 3D grid by sequential SVD.

    The grid is reshaped to (N1, N2*N3), split with a truncated SVD, and
    the remainder reshaped to (r1*N2, N3) and split again. Discarded
    singular values from both splits are accumulated into the train's
    ``truncation_bound``, which bounds the Frobenius reconstruction error
    from above.

    Parameters
    ----------
    volume : DenseVolume or ndarray
        Source grid; all dims must be >= 2 and all values finite.
    spec : TTBuildSpec
        Truncation policy (rank cap and/or relative tolerance).
    """
    values = getattr(volume, "values", volume)
    arr = as_grid_values(values, "volume values")
    n1, n2, n3 = arr.shape
    if min(n1, n2, n3) < 2:
        raise ValueError(f"all dims must be >= 2, got {arr.shape}")

    norm_f = float(np.linalg.norm(arr))

    u1, s1, v1t = np.linalg.svd(arr.reshape(n1, n2 * n3), full_matrices=False)
    r1, disc1 = _truncation_rank(s1, spec, norm_f)
    core1 = u1[:, :r1]
    rest = s1[:r1, np.newaxis] * v1t[:r1]

    u2, s2, v2t = np.linalg.svd(rest.reshape(r1 * n2, n3), full_matrices=False)
    r2, disc2 = _truncation_rank(s2, spec, norm_f)
    core2 = u2[:, :r2].reshape(r1, n2, r2)
    core3 = s2[:r2, np.newaxis] * v2t[:r2]

    return TensorTrain3(core1, core2, core3, truncation_bound=float(np.sqrt(disc1 + disc2)))


def tt_eval(tt: TensorTrain3, idx: tuple[int, int, int]) -> float:
    """Evaluate one grid element from the cores in O(r1*r2) operations."""
    i, j, k = idx
    n1, n2, n3 = tt.dims
    if not (0 <= i < n1 and 0 <= j < n2 and 0 <= k < n3):
        raise IndexError(f"index {(i, j, k)} out of range for dims {tt.dims}")
    return float(tt.core1[i] @ tt.core2[:, j, :] @ tt.core3[:, k])


def tt_eval_batch(tt: TensorTrain3, indices: np.ndarray) -> np.ndarray:
    """Evaluate many grid elements at once.

    ``indices`` is an (n, 3) integer array; returns an (n,) float array.
    Vectorized form of :func:`tt_eval` for samplers that query thousands
    of voxels per iteration.
    """
    idx = np.asarray(indices)
    if idx.ndim != 2 or idx.shape[1] != 3:
        raise ValueError(f"indices must have shape (n, 3), got {idx.shape}")
    n1, n2, n3 = tt.dims
    i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    if (
        i.min(initial=0) < 0
        or j.min(initial=0) < 0
        or k.min(initial=0) < 0
        or i.max(initial=-1) >= n1
        or j.max(initial=-1) >= n2
        or k.max(initial=-1) >= n3
    ):
        raise IndexError(f"indices out of range for dims {tt.dims}")
    left = np.einsum("na,anb->nb", tt.core1[i], tt.core2[:, j, :])
    return np.einsum("nb,bn->n", left, tt.core3[:, k])


def tt_reconstruct(
    tt: TensorTrain3,
    origin=(0.0, 0.0, 0.0),
    spacing=(1.0, 1.0, 1.0),
    mem_budget: int | None = None,
) -> DenseVolume:
    """Contract all cores into a dense grid.

    Refuses to allocate more than the memory budget (``mem_budget`` bytes,
    falling back to the TTREG_MEM_BUDGET environment variable, then to 4
    GiB). ``origin`` and ``spacing`` become the world mapping of the
    returned volume; a train holds no world metadata of its own.
    """
    from .volume import DenseVolume

    n1, n2, n3 = tt.dims
    budget = _mem_budget(mem_budget)
    needed = n1 * n2 * n3 * 8
    if needed > budget:
        raise MemoryBudgetError(
            f"dense reconstruction needs {needed} bytes, budget is {budget}"
        )
    values = np.einsum("ia,ajb,bk->ijk", tt.core1, tt.core2, tt.core3, optimize=True)
    return DenseVolume(values=values, origin=origin, spacing=spacing)


def diff_matrix(n: int, h: float) -> sparse.csr_array:
    """Sparse n x n first-derivative stencil on a uniform grid of step h.

    Interior rows hold the central difference (f[k+1] - f[k-1]) / (2h);
    the first and last rows hold the one-sided 3-point stencils
    (-3/2, 2, -1/2)/h and (1/2, -2, 3/2)/h. Every row is exact for
    polynomials up to degree 2, giving O(h^2) accuracy at all nodes
    including the ends.
    """
    if n < 3:
        raise ValueError(f"grid length must be >= 3, got {n}")
    if h <= 0:
        raise ValueError(f"grid spacing must be > 0, got {h}")
    c = 1.0 / (2.0 * h)
    interior = np.arange(1, n - 1)
    rows = np.concatenate([[0, 0, 0], interior, interior, [n - 1, n - 1, n - 1]])
    cols = np.concatenate(
        [[0, 1, 2], interior - 1, interior + 1, [n - 3, n - 2, n - 1]]
    )
    vals = np.concatenate(
        [
            [-3.0 * c, 4.0 * c, -c],
            np.full(n - 2, -c),
            np.full(n - 2, c),
            [c, -4.0 * c, 3.0 * c],
        ]
    )
    return sparse.csr_array((vals, (rows, cols)), shape=(n, n))


def dense_derivative(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Apply the :func:`diff_matrix` stencil to a dense grid along one axis."""
    arr = np.asarray(values, dtype=np.float64)
    if not 0 <= axis < arr.ndim:
        raise ValueError(f"axis {axis} out of range for ndim {arr.ndim}")
    n = arr.shape[axis]
    d = diff_matrix(n, h)
    moved = np.moveaxis(arr, axis, 0)
    out = (d @ moved.reshape(n, -1)).reshape(moved.shape)
    return np.moveaxis(out, 0, axis)


def tt_derivative(tt: TensorTrain3, axis: int, h: float) -> TensorTrain3:
    """Differentiate the represented grid along one axis, in TT form.

    Because the stencil acts on a single grid index, it touches exactly
    one core: the derivative train shares the other two cores and has
    identical dims and ranks. Cost is O(N_axis * r^2) versus O(N^3) for
    the dense grid.

    ``axis`` is 0-based; the grid must have at least 3 nodes along it.
    """
    n = tt.dims
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    if n[axis] < 3:
        raise ValueError(f"axis {axis} has length {n[axis]}, need >= 3")
    d = diff_matrix(n[axis], h)
    if axis == 0:
        return TensorTrain3(d @ tt.core1, tt.core2, tt.core3)
    if axis == 1:
        r1, n2, r2 = tt.core2.shape
        mid = tt.core2.transpose(1, 0, 2).reshape(n2, r1 * r2)
        core2 = (d @ mid).reshape(n2, r1, r2).transpose(1, 0, 2)
        return TensorTrain3(tt.core1, core2, tt.core3)
    return TensorTrain3(tt.core1, tt.core2, (d @ tt.core3.T).T)


def tt_element_count(dims: tuple[int, int, int], ranks: tuple[int, int]) -> int:
    """Number of scalars stored by a train with the given dims and ranks."""
    n1, n2, n3 = dims
    r1, r2 = ranks
    return n1 * r1 + r1 * n2 * r2 + r2 * n3


def tt_memory_bytes(tt: TensorTrain3, bytes_per_scalar: int = 4) -> int:
    """Bytes needed to store the cores, excluding metadata."""
    return tt_element_count(tt.dims, tt.ranks) * bytes_per_scalar
