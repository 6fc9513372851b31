import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import ttreg
from ttreg import Box, DenseVolume, OccupancyGrid, Sphere, SphereUnion

from conftest import BOUNDS, SPHERE


def brute_force_sdf(occ: np.ndarray, h: float) -> np.ndarray:
    """O(N^6) nearest-voxel search, mirroring the production distance formula
    (integer squared index distance, then one scaling by h)."""
    idx = np.indices(occ.shape).reshape(3, -1).T
    occupied = idx[occ.ravel()]
    free = idx[~occ.ravel()]

    def dist_to(points, targets):
        d2 = ((points[:, None, :] - targets[None, :, :]) ** 2).sum(-1)
        return h * np.sqrt(d2.min(axis=1).astype(np.float64))

    out = np.empty(occ.size)
    out[occ.ravel()] = -dist_to(occupied, free)
    out[~occ.ravel()] = dist_to(free, occupied)
    return out.reshape(occ.shape)


def random_occupancy(rng, dims=(8, 8, 8), p=0.3) -> np.ndarray:
    occ = rng.random(dims) < p
    occ[0, 0, 0] = True  # keep both classes populated
    occ[-1, -1, -1] = False
    return occ


class TestGridMapping:
    def test_voxel_center_maps_to_itself(self):
        vol = DenseVolume(np.zeros((4, 5, 6)), origin=(1.0, 2.0, 3.0), spacing=(0.5, 0.5, 0.5))
        idx, ok = vol.world_to_index(vol.index_to_world([2, 3, 4]))
        assert ok[0]
        assert_array_equal(idx[0], [2, 3, 4])

    def test_below_half_cell_rounds_down(self):
        vol = DenseVolume(np.zeros((4, 4, 4)), origin=(0.0, 0.0, 0.0), spacing=(1.0, 1.0, 1.0))
        idx, ok = vol.world_to_index([0.49, 0.0, 0.0])
        assert ok[0] and idx[0, 0] == 0
        idx, _ = vol.world_to_index([0.51, 0.0, 0.0])
        assert idx[0, 0] == 1

    def test_matches_exhaustive_nearest_center(self):
        rng = np.random.default_rng(0)
        vol = DenseVolume(
            np.zeros((8, 8, 8)), origin=(-0.7, 0.1, 0.4), spacing=(0.2, 0.3, 0.1)
        )
        centers = vol.index_to_world(np.indices((8, 8, 8)).reshape(3, -1).T)
        lo, hi = vol.bounds
        pts = rng.uniform(lo, hi, size=(200, 3))
        idx, ok = vol.world_to_index(pts)
        assert ok.all()
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        nearest = centers[d2.argmin(axis=1)]
        assert_allclose(vol.index_to_world(idx), nearest, atol=1e-12)

    def test_out_of_bounds_is_reported_not_raised(self):
        vol = DenseVolume(np.zeros((4, 4, 4)), origin=(0.0, 0.0, 0.0), spacing=(1.0, 1.0, 1.0))
        idx, ok = vol.world_to_index([[-0.6, 0.0, 0.0], [3.4, 3.4, 3.4]])
        assert not ok[0] and ok[1]
        assert idx[0, 0] == -1

    def test_round_trip_identity_on_all_indices(self):
        vol = DenseVolume(
            np.zeros((5, 6, 7)), origin=(0.3, -0.2, 0.9), spacing=(0.11, 0.07, 0.05)
        )
        all_idx = np.indices((5, 6, 7)).reshape(3, -1).T
        back, ok = vol.world_to_index(vol.index_to_world(all_idx))
        assert ok.all()
        assert_array_equal(back, all_idx)

    def test_spacing_must_be_positive(self):
        with pytest.raises(ValueError):
            DenseVolume(np.zeros((4, 4, 4)), origin=(0, 0, 0), spacing=(0.1, 0.0, 0.1))


class TestSignedDistance:
    def test_single_occupied_voxel(self):
        occ = np.zeros((9, 9, 9), dtype=bool)
        occ[4, 4, 4] = True
        h = 0.2
        sdf = ttreg.sdf_from_occupancy(
            OccupancyGrid(occ, origin=(0, 0, 0), spacing=(h, h, h))
        )
        assert sdf.values[7, 4, 4] == pytest.approx(3 * h)
        assert sdf.values[4, 4, 4] == pytest.approx(-h)

    def test_half_space_is_signed_ramp(self):
        occ = np.zeros((8, 8, 8), dtype=bool)
        occ[:4] = True
        h = 0.5
        sdf = ttreg.sdf_from_occupancy(
            OccupancyGrid(occ, origin=(0, 0, 0), spacing=(h, h, h))
        )
        expected_line = h * np.array([-4, -3, -2, -1, 1, 2, 3, 4], dtype=np.float64)
        for j in range(8):
            assert_allclose(sdf.values[:, j, 3], expected_line)

    def test_matches_brute_force_exactly(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            occ = random_occupancy(rng)
            h = float(rng.uniform(0.05, 1.5))
            sdf = ttreg.sdf_from_occupancy(
                OccupancyGrid(occ, origin=(0, 0, 0), spacing=(h, h, h))
            )
            assert_array_equal(sdf.values, brute_force_sdf(occ, h))

    def test_complement_symmetry(self):
        rng = np.random.default_rng(43)
        occ = random_occupancy(rng)
        grid = OccupancyGrid(occ, origin=(0, 0, 0), spacing=(0.1, 0.1, 0.1))
        flipped = OccupancyGrid(~occ, origin=(0, 0, 0), spacing=(0.1, 0.1, 0.1))
        assert_array_equal(
            ttreg.sdf_from_occupancy(flipped).values, -ttreg.sdf_from_occupancy(grid).values
        )

    def test_uniform_grids_rejected(self):
        with pytest.raises(ValueError):
            OccupancyGrid(np.ones((4, 4, 4), dtype=bool), origin=(0, 0, 0), spacing=(1, 1, 1))
        with pytest.raises(ValueError):
            OccupancyGrid(np.zeros((4, 4, 4), dtype=bool), origin=(0, 0, 0), spacing=(1, 1, 1))


class TestTruncate:
    def test_clamps_to_band(self):
        vol = DenseVolume(
            np.array([[[5.0, -5.0, 0.5, -0.5]]]) , origin=(0, 0, 0), spacing=(1, 1, 1)
        )
        out = ttreg.truncate(vol, 1.0)
        assert_array_equal(out.values, [[[1.0, -1.0, 0.5, -0.5]]])

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        vol = DenseVolume(rng.standard_normal((6, 6, 6)), origin=(0, 0, 0), spacing=(1, 1, 1))
        once = ttreg.truncate(vol, 0.7)
        twice = ttreg.truncate(once, 0.7)
        assert_array_equal(once.values, twice.values)

    def test_rejects_bad_mu(self):
        vol = DenseVolume(np.zeros((4, 4, 4)), origin=(0, 0, 0), spacing=(1, 1, 1))
        with pytest.raises(ValueError):
            ttreg.truncate(vol, 0.0)


class TestAnalyticShapes:
    def test_sphere_center_value(self):
        vol = ttreg.analytic_sdf(Sphere(center=(0, 0, 0), radius=0.5), (33, 33, 33), BOUNDS)
        # odd dims put a voxel center exactly at the world origin
        assert vol.values[16, 16, 16] == pytest.approx(-0.5)

    def test_sphere_zero_crossing_near_radius(self):
        vol = ttreg.analytic_sdf(SPHERE, (64, 64, 64), BOUNDS)
        row = vol.values[:, 32, 32]
        x = vol.index_to_world(
            np.column_stack([np.arange(64), np.full(64, 32), np.full(64, 32)])
        )[:, 0]
        flip = 32 + np.flatnonzero(np.diff(np.sign(row[32:])))[0]
        crossing = 0.5 * (x[flip] + x[flip + 1])
        assert abs(crossing - 0.5) <= vol.spacing[0] / 2

    def test_box_sdf_matches_sampled_surface(self):
        box = Box(center=(0, 0, 0), half_extents=(0.5, 0.35, 0.25))
        e = np.array(box.half_extents)
        faces = []
        n = 80
        for ax in range(3):
            u, v = [a for a in range(3) if a != ax]
            gu = np.linspace(-e[u], e[u], n)
            gv = np.linspace(-e[v], e[v], n)
            uu, vv = np.meshgrid(gu, gv, indexing="ij")
            for s in (-1.0, 1.0):
                f = np.zeros((n * n, 3))
                f[:, ax] = s * e[ax]
                f[:, u] = uu.ravel()
                f[:, v] = vv.ravel()
                faces.append(f)
        surface = np.concatenate(faces)
        rng = np.random.default_rng(5)
        queries = rng.uniform(-1, 1, (300, 3))
        sd = box.sdf(queries)
        outside = sd > 0.1
        brute = np.sqrt(
            ((queries[outside][:, None, :] - surface[None, :, :]) ** 2).sum(-1)
        ).min(axis=1)
        assert np.all(np.abs(brute - sd[outside]) / sd[outside] <= 0.02)

    def test_union_is_pointwise_min(self):
        s1 = Sphere(center=(-0.3, 0, 0), radius=0.4)
        s2 = Sphere(center=(0.3, 0, 0), radius=0.2)
        union = SphereUnion((s1, s2))
        pts = np.random.default_rng(2).uniform(-1, 1, (100, 3))
        assert_array_equal(union.sdf(pts), np.minimum(s1.sdf(pts), s2.sdf(pts)))

    def test_degenerate_parameters_rejected(self):
        with pytest.raises(ValueError):
            Sphere(center=(0, 0, 0), radius=0.0)
        with pytest.raises(ValueError):
            Box(center=(0, 0, 0), half_extents=(0.5, -0.1, 0.2))
        with pytest.raises(ValueError):
            SphereUnion(())

    def test_eikonal_property_of_sampled_sphere(self):
        vol = ttreg.analytic_sdf(SPHERE, (48, 48, 48), BOUNDS)
        h = float(vol.spacing[0])
        grads = np.stack(
            [ttreg.dense_derivative(vol.values, a, h) for a in range(3)], axis=-1
        )
        mag = np.linalg.norm(grads, axis=-1)
        centers = vol.index_to_world(np.indices(vol.dims).reshape(3, -1).T)
        r = np.linalg.norm(centers, axis=1).reshape(vol.dims)
        interior = np.zeros(vol.dims, dtype=bool)
        interior[2:-2, 2:-2, 2:-2] = True
        mask = interior & (r > 2 * h)
        assert mag[mask].min() >= 0.9
        assert mag[mask].max() <= 1.1


class TestSurfaceSampling:
    def test_analytic_sphere_points_on_surface(self):
        h = 2.0 / 64
        pts = ttreg.sample_surface_points(
            SPHERE, 300, np.random.default_rng(0), bounds=BOUNDS, band=h / 2
        )
        assert pts.shape == (300, 3)
        assert np.abs(SPHERE.sdf(pts)).max() <= h / 2

    def test_volume_source_mean_error(self):
        vol = ttreg.analytic_sdf(SPHERE, (64, 64, 64), BOUNDS)
        h = float(vol.spacing[0])
        pts = ttreg.sample_surface_points(vol, 500, np.random.default_rng(0))
        assert pts.shape == (500, 3)
        assert np.abs(SPHERE.sdf(pts)).mean() <= h / 4

    def test_deterministic_under_seed(self):
        a = ttreg.sample_surface_points(
            SPHERE, 100, np.random.default_rng(9), bounds=BOUNDS, band=0.01
        )
        b = ttreg.sample_surface_points(
            SPHERE, 100, np.random.default_rng(9), bounds=BOUNDS, band=0.01
        )
        assert_array_equal(a, b)

    def test_unreachable_surface_raises(self):
        far = Sphere(center=(50.0, 0.0, 0.0), radius=0.5)
        with pytest.raises(RuntimeError):
            ttreg.sample_surface_points(
                far, 10, np.random.default_rng(0), bounds=BOUNDS, band=0.01, max_rounds=3
            )

    def test_analytic_source_requires_bounds_and_band(self):
        with pytest.raises(ValueError):
            ttreg.sample_surface_points(SPHERE, 10, np.random.default_rng(0))
