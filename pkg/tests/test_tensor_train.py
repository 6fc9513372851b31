import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import sparse

import ttreg
from ttreg import TTBuildSpec, TensorTrain3

from conftest import BOUNDS, SPHERE


def random_tt(rng, dims=(8, 8, 8), ranks=(3, 4)):
    """A tensor train with random cores (not derived from any dense grid)."""
    return TensorTrain3(
        rng.standard_normal((dims[0], ranks[0])),
        rng.standard_normal((ranks[0], dims[1], ranks[1])),
        rng.standard_normal((ranks[1], dims[2])),
    )


class TestBuildSpec:
    def test_requires_a_criterion(self):
        with pytest.raises(ValueError):
            TTBuildSpec()

    def test_rejects_zero_rank_cap(self):
        with pytest.raises(ValueError):
            TTBuildSpec(max_rank=0)

    def test_rejects_negative_tolerance(self):
        with pytest.raises(ValueError):
            TTBuildSpec(rel_tolerance=-0.1)

    def test_lossless_shorthand(self):
        spec = TTBuildSpec.lossless()
        assert spec.rel_tolerance == 0.0 and spec.max_rank is None


class TestContainer:
    def test_dims_and_ranks_from_cores(self):
        tt = random_tt(np.random.default_rng(0), dims=(6, 5, 4), ranks=(2, 3))
        assert tt.dims == (6, 5, 4)
        assert tt.ranks == (2, 3)

    def test_inconsistent_cores_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            TensorTrain3(
                rng.standard_normal((6, 2)),
                rng.standard_normal((3, 5, 3)),  # left rank 3 != 2
                rng.standard_normal((3, 4)),
            )

    def test_rank_bounds_enforced(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            # r2 = 5 > min(N1*N2, N3) = 4
            TensorTrain3(
                rng.standard_normal((6, 2)),
                rng.standard_normal((2, 5, 5)),
                rng.standard_normal((5, 4)),
            )

    def test_non_finite_cores_rejected(self):
        rng = np.random.default_rng(0)
        c1 = rng.standard_normal((6, 2))
        c1[0, 0] = np.nan
        with pytest.raises(ValueError):
            TensorTrain3(c1, rng.standard_normal((2, 5, 2)), rng.standard_normal((2, 4)))


class TestTTSVD:
    def test_separable_input_is_rank_one(self):
        rng = np.random.default_rng(3)
        a, b, c = rng.standard_normal(7), rng.standard_normal(6), rng.standard_normal(5)
        vol = np.einsum("i,j,k->ijk", a, b, c)
        tt = ttreg.tt_svd(vol, TTBuildSpec.lossless())
        assert tt.ranks == (1, 1)
        assert_allclose(ttreg.tt_reconstruct(tt).values, vol, atol=1e-12)

    def test_lossless_random(self):
        rng = np.random.default_rng(4)
        vol = rng.standard_normal((8, 8, 8))
        tt = ttreg.tt_svd(vol, TTBuildSpec.lossless())
        rel = np.linalg.norm(vol - ttreg.tt_reconstruct(tt).values) / np.linalg.norm(vol)
        assert rel <= 1e-12

    def test_sphere_compression_regression(self):
        # Pinned dense-reconstruction baseline: the sphere distance field is
        # numerically low-rank, so rank 20 already reproduces it to roundoff.
        vol = ttreg.analytic_sdf(SPHERE, (64, 64, 64), BOUNDS)
        tt = ttreg.tt_svd(vol, TTBuildSpec(max_rank=20))
        rel = np.linalg.norm(vol.values - ttreg.tt_reconstruct(tt).values) / np.linalg.norm(
            vol.values
        )
        assert rel <= 1e-12
        assert max(tt.ranks) <= 20

    @pytest.mark.parametrize("cap", [2, 4, 8])
    def test_error_bound_holds(self, cap):
        rng = np.random.default_rng(cap)
        for _ in range(5):
            vol = rng.standard_normal((12, 12, 12))
            tt = ttreg.tt_svd(vol, TTBuildSpec(max_rank=cap))
            err = np.linalg.norm(vol - ttreg.tt_reconstruct(tt).values)
            assert err <= tt.truncation_bound + 1e-12 * np.linalg.norm(vol)

    def test_tolerance_target_met(self):
        rng = np.random.default_rng(9)
        vol = rng.standard_normal((10, 10, 10))
        for tol in (0.5, 0.1, 0.01):
            tt = ttreg.tt_svd(vol, TTBuildSpec(rel_tolerance=tol))
            rel = np.linalg.norm(vol - ttreg.tt_reconstruct(tt).values) / np.linalg.norm(vol)
            assert rel <= tol

    def test_rank_cap_wins_over_tolerance(self):
        rng = np.random.default_rng(10)
        vol = rng.standard_normal((10, 10, 10))
        tt = ttreg.tt_svd(vol, TTBuildSpec(max_rank=3, rel_tolerance=1e-14))
        assert tt.ranks == (3, 3)

    def test_tolerance_wins_when_flagged(self):
        rng = np.random.default_rng(10)
        vol = rng.standard_normal((10, 10, 10))
        tt = ttreg.tt_svd(
            vol, TTBuildSpec(max_rank=3, rel_tolerance=1e-14, rank_cap_wins=False)
        )
        assert tt.ranks[0] > 3

    def test_error_monotone_in_rank(self):
        vol = ttreg.analytic_sdf(SPHERE, (32, 32, 32), BOUNDS)
        errs = []
        for rank in (2, 4, 8, 16, 32):
            tt = ttreg.tt_svd(vol, TTBuildSpec(max_rank=rank))
            errs.append(np.linalg.norm(vol.values - ttreg.tt_reconstruct(tt).values))
        assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))

    def test_rejects_tiny_dims(self):
        with pytest.raises(ValueError):
            ttreg.tt_svd(np.zeros((1, 8, 8)), TTBuildSpec.lossless())

    def test_rejects_non_finite(self):
        vol = np.zeros((4, 4, 4))
        vol[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            ttreg.tt_svd(vol, TTBuildSpec.lossless())


class TestEval:
    def test_matches_dense_exhaustively(self):
        rng = np.random.default_rng(5)
        vol = rng.standard_normal((6, 5, 4))
        tt = ttreg.tt_svd(vol, TTBuildSpec.lossless())
        for idx in np.ndindex(6, 5, 4):
            assert abs(ttreg.tt_eval(tt, idx) - vol[idx]) <= 1e-12

    def test_zero_volume(self):
        tt = ttreg.tt_svd(np.zeros((4, 4, 4)), TTBuildSpec.lossless())
        assert ttreg.tt_eval(tt, (1, 2, 3)) == 0.0

    def test_eval_equals_reconstruct(self):
        rng = np.random.default_rng(6)
        tt = random_tt(rng, dims=(5, 6, 7), ranks=(2, 3))
        dense = ttreg.tt_reconstruct(tt).values
        for idx in np.ndindex(5, 6, 7):
            assert abs(ttreg.tt_eval(tt, idx) - dense[idx]) <= 1e-12

    def test_out_of_range(self):
        tt = random_tt(np.random.default_rng(0))
        with pytest.raises(IndexError):
            ttreg.tt_eval(tt, (8, 0, 0))
        with pytest.raises(IndexError):
            ttreg.tt_eval(tt, (0, -1, 0))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(7)
        tt = random_tt(rng)
        idx = rng.integers(0, 8, size=(50, 3))
        batch = ttreg.tt_eval_batch(tt, idx)
        for n in range(50):
            assert abs(batch[n] - ttreg.tt_eval(tt, tuple(idx[n]))) <= 1e-12

    def test_batch_out_of_range(self):
        tt = random_tt(np.random.default_rng(0))
        with pytest.raises(IndexError):
            ttreg.tt_eval_batch(tt, np.array([[0, 0, 8]]))


class TestReconstruct:
    def test_round_trip(self):
        rng = np.random.default_rng(8)
        vol = rng.standard_normal((8, 8, 8))
        back = ttreg.tt_reconstruct(ttreg.tt_svd(vol, TTBuildSpec.lossless())).values
        assert_allclose(back, vol, atol=1e-12)

    def test_rank_one_is_outer_product(self):
        rng = np.random.default_rng(9)
        tt = random_tt(rng, dims=(4, 5, 6), ranks=(1, 1))
        expected = np.einsum(
            "ia,ajb,bk->ijk", tt.core1, tt.core2, tt.core3
        )
        assert_allclose(ttreg.tt_reconstruct(tt).values, expected, atol=1e-14)

    def test_memory_budget(self):
        tt = random_tt(np.random.default_rng(1), dims=(16, 16, 16), ranks=(2, 2))
        with pytest.raises(ttreg.MemoryBudgetError):
            ttreg.tt_reconstruct(tt, mem_budget=1000)

    def test_memory_budget_env(self, monkeypatch):
        tt = random_tt(np.random.default_rng(1), dims=(16, 16, 16), ranks=(2, 2))
        monkeypatch.setenv("TTREG_MEM_BUDGET", "1000")
        with pytest.raises(ttreg.MemoryBudgetError):
            ttreg.tt_reconstruct(tt)


class TestDiffMatrix:
    @pytest.mark.parametrize("n", [3, 10, 101])
    def test_exact_on_low_degree_polynomials(self, n):
        h = 0.1
        x = np.arange(n) * h
        d = ttreg.diff_matrix(n, h)
        assert np.abs(d @ np.full(n, 3.7)).max() <= 1e-12
        assert np.abs(d @ x - 1.0).max() <= 1e-12
        assert np.abs(d @ x**2 - 2.0 * x).max() <= 1e-11

    def test_is_sparse(self):
        d = ttreg.diff_matrix(50, 0.5)
        assert sparse.issparse(d)
        assert d.nnz == 2 * 48 + 6

    def test_second_order_convergence(self):
        errs = []
        for n in (20, 40, 80):
            h = 1.0 / (n - 1)
            x = np.arange(n) * h
            d = ttreg.diff_matrix(n, h)
            errs.append(np.abs(d @ np.sin(x) - np.cos(x)).max())
        assert errs[0] / errs[1] > 3.0
        assert errs[1] / errs[2] > 3.0

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            ttreg.diff_matrix(2, 0.1)
        with pytest.raises(ValueError):
            ttreg.diff_matrix(5, 0.0)


class TestTTDerivative:
    def test_ramp_derivative_is_ones(self):
        x = np.linspace(-1, 1, 9)
        vol = np.broadcast_to(x[:, None, None], (9, 5, 6)).copy()
        tt = ttreg.tt_svd(vol, TTBuildSpec.lossless())
        d = ttreg.tt_derivative(tt, 0, x[1] - x[0])
        assert_allclose(ttreg.tt_reconstruct(d).values, np.ones((9, 5, 6)), atol=1e-10)

    def test_cross_axis_derivative_is_zero(self):
        x = np.linspace(-1, 1, 9)
        vol = np.broadcast_to(x[:, None, None], (9, 5, 6)).copy()
        tt = ttreg.tt_svd(vol, TTBuildSpec.lossless())
        d = ttreg.tt_derivative(tt, 1, 0.25)
        assert np.abs(ttreg.tt_reconstruct(d).values).max() <= 1e-10

    @pytest.mark.parametrize("axis", [0, 1, 2])
    def test_matches_dense_operator(self, axis):
        rng = np.random.default_rng(11 + axis)
        for _ in range(10):
            tt = random_tt(rng)
            h = float(rng.uniform(0.05, 2.0))
            got = ttreg.tt_reconstruct(ttreg.tt_derivative(tt, axis, h)).values
            want = ttreg.dense_derivative(ttreg.tt_reconstruct(tt).values, axis, h)
            assert np.abs(got - want).max() <= 1e-10

    def test_preserves_dims_and_ranks(self):
        tt = random_tt(np.random.default_rng(12), dims=(7, 6, 5), ranks=(2, 3))
        for axis in range(3):
            d = ttreg.tt_derivative(tt, axis, 0.1)
            assert d.dims == tt.dims and d.ranks == tt.ranks

    def test_only_selected_core_changes(self):
        tt = random_tt(np.random.default_rng(13))
        d = ttreg.tt_derivative(tt, 1, 0.1)
        assert d.core1 is tt.core1 and d.core3 is tt.core3
        assert not np.array_equal(d.core2, tt.core2)

    def test_linearity(self):
        rng = np.random.default_rng(14)
        f = rng.standard_normal((6, 6, 6))
        g = rng.standard_normal((6, 6, 6))
        alpha, beta = 1.7, -0.4
        spec = TTBuildSpec.lossless()
        d_sum = ttreg.tt_reconstruct(
            ttreg.tt_derivative(ttreg.tt_svd(alpha * f + beta * g, spec), 2, 0.3)
        ).values
        d_f = ttreg.tt_reconstruct(ttreg.tt_derivative(ttreg.tt_svd(f, spec), 2, 0.3)).values
        d_g = ttreg.tt_reconstruct(ttreg.tt_derivative(ttreg.tt_svd(g, spec), 2, 0.3)).values
        assert_allclose(d_sum, alpha * d_f + beta * d_g, atol=1e-10)

    def test_invalid_axis_and_short_grid(self):
        tt = random_tt(np.random.default_rng(15))
        with pytest.raises(ValueError):
            ttreg.tt_derivative(tt, 3, 0.1)
        short = random_tt(np.random.default_rng(16), dims=(2, 8, 8), ranks=(2, 2))
        with pytest.raises(ValueError):
            ttreg.tt_derivative(short, 0, 0.1)


class TestMemoryAccounting:
    def test_red_kitchen_numbers(self):
        # (346, 153, 152) at rank 70 and 4 bytes/scalar: 3.14 MB map.
        count = ttreg.tt_element_count((346, 153, 152), (70, 70))
        assert count * 4 == 3_138_240

    def test_rank_one_count(self):
        tt = random_tt(np.random.default_rng(0), dims=(9, 9, 9), ranks=(1, 1))
        assert ttreg.tt_memory_bytes(tt, 8) == 27 * 8

    def test_compression_ratio_regime(self):
        dense = 512**3 * 4
        compressed = ttreg.tt_element_count((512, 512, 512), (20, 20)) * 4
        assert 100 <= dense / compressed <= 1000
