"""Scalar fBm: covariance, kernel, transfer operator, sampler and Wiener integrals.

Fixture values marked "mpmath" were computed once with 30-digit mpmath and
frozen here: the Beta function directly, the kernel integral after the
substitution u = s + v^(1/(H-1/2)), which removes the endpoint singularity.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fbmsteer.fractional_noise import (
    EmbeddingError,
    HurstParam,
    SamplePath,
    TimeGrid,
    c_h,
    covariance_matrix,
    covariance_rh,
    fgn_autocovariance,
    kernel_covariance,
    kernel_kh,
    khstar_transform,
    l2_norm_sq,
    abs_norm_rhs,
    norm_h_abs,
    rng_stream,
    sample_brownian_increments,
    sample_fbm_path,
    sample_fbm_paths,
    transfer_norm_sq,
    wiener_integral_fbm,
)

# mpmath fixtures
C_H_07 = 0.218361826176782517582820958248
C_H_075 = 0.267411158757997581025176832515
K_07_1_05 = 0.97714049739361676047411003254
K_07_08_03 = 0.991324035240053407237843869641
K_06_1_05 = 1.01153142014945051628312241052


class TestHurstParam:
    def test_open_interval(self):
        assert HurstParam(0.7).h == 0.7

    @pytest.mark.parametrize("h", [0.5, 0.3, 1.0, 1.2, -0.1])
    def test_rejects_outside(self, h):
        with pytest.raises(ValueError):
            HurstParam(h)

    def test_brownian_mode_flag(self):
        hp = HurstParam(0.5, allow_brownian=True)
        assert hp.is_brownian

    def test_brownian_flag_does_not_widen_range(self):
        with pytest.raises(ValueError):
            HurstParam(0.4, allow_brownian=True)


class TestTimeGrid:
    def test_points(self):
        g = TimeGrid(2.0, 4)
        np.testing.assert_allclose(g.points, [0, 0.5, 1.0, 1.5, 2.0])
        assert g.dt == 0.5
        assert g.points[0] == 0.0 and g.points[-1] == 2.0

    def test_midpoints(self):
        np.testing.assert_allclose(TimeGrid(1.0, 4).midpoints, [0.125, 0.375, 0.625, 0.875])

    @pytest.mark.parametrize("t_end,n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
    def test_invalid(self, t_end, n):
        with pytest.raises(ValueError):
            TimeGrid(t_end, n)

    def test_index_of(self):
        g = TimeGrid(1.0, 10)
        assert g.index_of(0.3) == 3
        with pytest.raises(ValueError):
            g.index_of(0.35)


class TestCovariance:
    @pytest.mark.parametrize("s,t,h,expected", [
        (1.0, 1.0, 0.7, 1.0),
        (1.0, 2.0, 0.75, math.sqrt(2.0)),
    ])
    def test_examples(self, s, t, h, expected):
        assert covariance_rh(s, t, h) == pytest.approx(expected, rel=1e-14)

    def test_brownian_min(self):
        assert covariance_rh(1.0, 3.0, HurstParam(0.5, allow_brownian=True)) == pytest.approx(1.0)

    def test_symmetry_and_diagonal(self):
        rng = np.random.default_rng(1)
        s, t = rng.uniform(0, 3, 50), rng.uniform(0, 3, 50)
        np.testing.assert_allclose(covariance_rh(s, t, 0.8), covariance_rh(t, s, 0.8), rtol=1e-14)
        np.testing.assert_allclose(covariance_rh(t, t, 0.8), t ** 1.6, rtol=1e-13)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            covariance_rh(-0.1, 1.0, 0.7)

    @pytest.mark.parametrize("h", [0.55, 0.7, 0.95])
    def test_psd(self, h):
        eig = np.linalg.eigvalsh(covariance_matrix(np.linspace(0.01, 2, 80), h))
        assert eig.min() >= -1e-10 * eig.max()

    def test_fgn_autocovariance_lag0(self):
        np.testing.assert_allclose(fgn_autocovariance(0.7, 3)[0], 1.0)


class TestConstantAndKernel:
    @pytest.mark.parametrize("h,expected", [(0.7, C_H_07), (0.75, C_H_075)])
    def test_c_h_against_mpmath(self, h, expected):
        assert c_h(h) == pytest.approx(expected, rel=1e-13)

    def test_c_h_vanishes_near_half(self):
        assert c_h(0.5 + 1e-8) < 1e-3
        assert c_h(0.5 + 1e-8) < c_h(0.51) < c_h(0.6)

    @pytest.mark.parametrize("t,s", [(0.5, 0.5), (0.3, 0.8)])
    def test_zero_convention(self, t, s):
        assert kernel_kh(t, s, 0.7) == 0.0

    @pytest.mark.parametrize("t,s,h,expected", [
        (1.0, 0.5, 0.7, K_07_1_05),
        (0.8, 0.3, 0.7, K_07_08_03),
        (1.0, 0.5, 0.6, K_06_1_05),
    ])
    def test_kernel_against_mpmath(self, t, s, h, expected):
        assert kernel_kh(t, s, h) == pytest.approx(expected, rel=1e-9)

    def test_kernel_rejects_zero(self):
        with pytest.raises(ValueError):
            kernel_kh(1.0, 0.0, 0.7)

    @pytest.mark.parametrize("h", [0.6, 0.7, 0.9])
    @pytest.mark.parametrize("s,t", [(0.2, 0.9), (0.5, 1.0), (1.0, 1.0), (0.7, 0.3)])
    def test_kernel_reproduces_covariance(self, h, s, t):
        assert kernel_covariance(s, t, h) == pytest.approx(covariance_rh(s, t, h), rel=1e-3)


class TestSampler:
    def test_starts_at_zero_and_shape(self):
        p = sample_fbm_path(0.7, TimeGrid(1.0, 64), seed=5, replication=2)
        assert p.values.shape == (65,) and p.values[0] == 0.0
        assert p.seed == 5 and p.replication_index == 2

    def test_values_immutable(self):
        p = sample_fbm_path(0.7, TimeGrid(1.0, 8), seed=5)
        with pytest.raises(ValueError):
            p.values[1] = 3.0

    def test_deterministic_and_order_free(self):
        g = TimeGrid(1.0, 100)
        batch = sample_fbm_paths(0.7, g, 11, [3, 0, 7])
        for row, rep in zip(batch, [3, 0, 7]):
            np.testing.assert_array_equal(row, sample_fbm_path(0.7, g, 11, rep).values)
        assert not np.array_equal(batch[0], batch[1])

    def test_brownian_mode_bitwise(self):
        g = TimeGrid(1.0, 128)
        hp = HurstParam(0.5, allow_brownian=True)
        path = sample_fbm_path(hp, g, 99, 4)
        direct = np.concatenate([[0.0], np.cumsum(sample_brownian_increments(g, 99, 4))])
        np.testing.assert_array_equal(path.values, direct)

    def test_brownian_increments_iid(self):
        g = TimeGrid(1.0, 64)
        paths = sample_fbm_paths(HurstParam(0.5, allow_brownian=True), g, 3, 4000)
        inc = np.diff(paths, axis=1) / math.sqrt(g.dt)
        assert abs(inc.var() - 1.0) < 0.02
        lag1 = np.mean(inc[:, 1:] * inc[:, :-1])
        assert abs(lag1) < 4 / math.sqrt(inc.size)

    def test_terminal_variance(self):
        paths = sample_fbm_paths(0.7, TimeGrid(1.0, 256), 2024, 10_000)
        sq = paths[:, -1] ** 2
        se = sq.std(ddof=1) / math.sqrt(sq.size)
        assert abs(sq.mean() - 1.0) <= 3 * se

    def test_covariance_h075(self):
        g = TimeGrid(1.0, 256)
        paths = sample_fbm_paths(0.75, g, 7, 10_000)
        prod = paths[:, 128] * paths[:, 256]
        se = prod.std(ddof=1) / math.sqrt(prod.size)
        assert abs(prod.mean() - covariance_rh(0.5, 1.0, 0.75)) <= 3 * se

    def test_ks_marginal(self):
        g = TimeGrid(1.0, 128)
        paths = sample_fbm_paths(0.8, g, 31, 10_000)
        t = g.points[77]
        z = paths[:, 77] / t ** 0.8
        assert stats.kstest(z, "norm").pvalue > 0.01

    def test_hosking_matches_covariance(self):
        g = TimeGrid(1.0, 32)
        paths = sample_fbm_paths(0.9, g, 8, 6000, method="hosking")
        emp = np.cov(paths[:, [8, 32]].T, bias=True)
        exact = covariance_matrix(np.array([0.25, 1.0]), 0.9)
        se = 4 * math.sqrt(2.0 / 6000)
        np.testing.assert_allclose(emp, exact, atol=se)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            sample_fbm_paths(0.7, TimeGrid(1.0, 8), 1, 1, method="euler")

    def test_circulant_only_never_degrades(self, monkeypatch):
        import fbmsteer.fractional_noise as fn
        monkeypatch.setattr(fn, "_circulant_eigenvalues", lambda h, n: np.array([-1.0, 1.0]))
        with pytest.raises(EmbeddingError):
            sample_fbm_paths(0.7, TimeGrid(1.0, 8), 1, 1, method="circulant")
        # auto falls back to the exact recursive sampler
        out = sample_fbm_paths(0.7, TimeGrid(1.0, 8), 1, 1, method="auto")
        assert out.shape == (1, 9)

    def test_streams_independent(self):
        a = rng_stream(1, 0, 0).standard_normal(4)
        b = rng_stream(1, 0, 1).standard_normal(4)
        c = rng_stream(1, 1, 0).standard_normal(4)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)

    def test_csv(self, tmp_path):
        p = sample_fbm_path(0.7, TimeGrid(1.0, 4), 1)
        p.to_csv(tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "t,value" and len(lines) == 6

    def test_samplepath_rejects_nonzero_start(self):
        with pytest.raises(ValueError):
            SamplePath(TimeGrid(1.0, 2), np.array([0.1, 0.2, 0.3]), HurstParam(0.7), 0, 0)


class TestTransferOperator:
    def test_zero(self):
        g = TimeGrid(1.0, 50)
        np.testing.assert_array_equal(khstar_transform(np.zeros(51), 0.7, g), 0.0)

    @pytest.mark.parametrize("h", [0.6, 0.7, 0.9])
    def test_isometry_constant(self, h):
        g = TimeGrid(1.0, 1000)
        assert transfer_norm_sq(khstar_transform(1.0, h, g), h, g) == pytest.approx(1.0, abs=2e-3)

    def test_isometry_indicator(self):
        # ||1_[0,t]||^2 = t^{2H}; the jump is resolved only to O(dt)
        g = TimeGrid(1.0, 1000)
        psi = (g.points <= 0.5).astype(float)
        assert transfer_norm_sq(khstar_transform(psi, 0.7, g), 0.7, g) == pytest.approx(0.5 ** 1.4, rel=5e-3)

    def test_isometry_on_longer_horizon(self):
        g = TimeGrid(2.0, 1000)
        assert transfer_norm_sq(khstar_transform(1.0, 0.7, g), 0.7, g) == pytest.approx(2.0 ** 1.4, rel=2e-3)


class TestWienerIntegral:
    def test_constant_telescopes(self):
        p = sample_fbm_path(0.7, TimeGrid(1.0, 64), 3)
        assert wiener_integral_fbm(np.ones(65), p) == pytest.approx(p.values[-1], abs=1e-14)

    def test_zero(self):
        p = sample_fbm_path(0.7, TimeGrid(1.0, 64), 3)
        assert wiener_integral_fbm(0.0, p) == 0.0

    def test_grid_mismatch(self):
        p = sample_fbm_path(0.7, TimeGrid(1.0, 64), 3)
        with pytest.raises(ValueError):
            wiener_integral_fbm(np.ones(10), p)

    def test_second_moment_constant(self):
        g = TimeGrid(1.0, 128)
        paths = sample_fbm_paths(0.7, g, 17, 10_000)
        vals = np.array([np.ones(129)[:-1] @ np.diff(row) for row in paths])
        sq = vals ** 2
        assert abs(sq.mean() - 1.0) <= 3 * sq.std(ddof=1) / math.sqrt(sq.size)

    def test_two_realisations_agree_in_law(self):
        # both second moments must match ||psi||_H^2 from the transfer operator
        g = TimeGrid(1.0, 200)
        psi = np.cos(2 * g.points)
        fine = TimeGrid(1.0, 2000)
        exact = transfer_norm_sq(khstar_transform(np.cos(2 * fine.points), 0.7, fine), 0.7, fine)
        reps = 3000
        a = np.array([wiener_integral_fbm(psi, sample_fbm_path(0.7, g, 5, r)) for r in range(reps)])
        path0 = sample_fbm_path(0.7, g, 5, 0)
        b = np.array([wiener_integral_fbm(psi, path0, sample_brownian_increments(g, 6, r))
                      for r in range(reps)])
        for sample in (a, b):
            sq = sample ** 2
            assert abs(sq.mean() - exact) <= 3 * sq.std(ddof=1) / math.sqrt(reps) + 0.01 * exact


class TestAbsNorm:
    def test_zero(self):
        assert norm_h_abs(np.zeros(11), 0.7, TimeGrid(1.0, 10)) == 0.0

    def test_constant(self):
        g = TimeGrid(1.0, 1000)
        assert norm_h_abs(1.0, 0.7, g) == pytest.approx(1.0, abs=1e-4)
        assert abs_norm_rhs(1.0, 0.7, g) == pytest.approx(1.4, rel=1e-12)

    @pytest.mark.parametrize("h", [0.6, 0.7, 0.9])
    def test_linear_closed_form(self, h):
        # H(2H-1) int int s t |s-t|^{2H-2} = 1 / (2H + 2)
        exact = 1.0 / (2 * h + 2)
        errs = []
        for n in (500, 1000):
            g = TimeGrid(1.0, n)
            errs.append(abs(norm_h_abs(g.points, h, g) - exact))
            assert norm_h_abs(g.points, h, g) <= abs_norm_rhs(g.points, h, g)
        assert errs[1] <= 5e-4 * exact
        assert errs[1] < errs[0]

    def test_l2_exact_for_linear(self):
        g = TimeGrid(1.0, 7)
        assert l2_norm_sq(g.points, g) == pytest.approx(1 / 3, rel=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=8),
           st.floats(0.55, 0.95), st.integers(0, 2 ** 32 - 1))
    def test_bound_on_random_piecewise_linear(self, values, h, seed):
        g = TimeGrid(1.0, 200)
        rng = np.random.default_rng(seed)
        knots = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, len(values) - 2)]))
        psi = np.interp(g.points, knots, values)
        assert norm_h_abs(psi, h, g) <= abs_norm_rhs(psi, h, g)
