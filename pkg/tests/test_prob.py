import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbdoemu.prob import (
    ProcessSpec,
    kl_expand,
    lhs_sample,
    make_marginal,
    marginal_from_dict,
    sample_process,
    transform_u_to_physical,
)

MONTHLY = ProcessSpec.monthly(12e3, 0.25, 1.0)


class TestMarginal:
    def test_lognormal_native_parameters(self, oracle):
        m = make_marginal("lognormal", 0.6, 0.10)
        assert m.params[0] == pytest.approx(oracle["lognormal_06_010"]["lam"], rel=1e-12)
        assert m.params[1] == pytest.approx(oracle["lognormal_06_010"]["zeta"], rel=1e-12)

    def test_constant_is_point_mass(self):
        m = make_marginal("constant", 1.4622e6)
        assert not m.is_random
        assert np.all(m.from_standard_normal(np.array([-3.0, 0.0, 5.0])) == 1.4622e6)

    def test_standard_normal(self):
        m = make_marginal("gaussian", 0.0, std=1.0)
        assert m.params == (0.0, 1.0)

    @pytest.mark.parametrize("kwargs", [{"cov": 0.0}, {"cov": -0.1}, {"std": 0.0}])
    def test_rejects_bad_dispersion(self, kwargs):
        with pytest.raises(ValueError, match="dispersion"):
            make_marginal("gaussian", 1.0, **kwargs)

    def test_lognormal_needs_positive_mean(self):
        with pytest.raises(ValueError, match="positive mean"):
            make_marginal("lognormal", -1.0, 0.1)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            make_marginal("weibull", 1.0, 0.1)

    @given(st.floats(0.01, 1e4), st.floats(0.01, 2.0))
    def test_lognormal_moment_round_trip(self, mean, cov):
        lam, zeta = make_marginal("lognormal", mean, cov).params
        back_mean = np.exp(lam + zeta**2 / 2)
        back_cov = np.sqrt(np.expm1(zeta**2))
        assert back_mean == pytest.approx(mean, rel=1e-12)
        assert back_cov == pytest.approx(cov, rel=1e-12)

    def test_dict_round_trip(self):
        for m in (make_marginal("lognormal", 3.0, 0.2), make_marginal("uniform", 1.0, std=0.5),
                  make_marginal("constant", 7.0)):
            back = marginal_from_dict(m.to_dict())
            assert back.family == m.family
            assert np.allclose(back.params, m.params, rtol=1e-14)


class TestTransform:
    def test_gaussian_median(self):
        assert transform_u_to_physical(0.5, make_marginal("gaussian", 3.0, std=2.0)) == 3.0

    def test_lognormal_median(self):
        m = make_marginal("lognormal", 2.0, 0.3)
        assert transform_u_to_physical(0.5, m) == pytest.approx(np.exp(m.params[0]), rel=1e-14)

    def test_normal_975(self, oracle):
        m = make_marginal("gaussian", 0.0, std=1.0)
        assert transform_u_to_physical(0.975, m) == pytest.approx(oracle["norm_ppf_0975"], abs=1e-9)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
    def test_u_out_of_range(self, u):
        with pytest.raises(ValueError):
            transform_u_to_physical(u, make_marginal("gaussian", 0.0, std=1.0))

    @given(st.floats(1e-9, 1 - 1e-9), st.floats(1e-9, 1 - 1e-9),
           st.sampled_from(["gaussian", "lognormal", "uniform"]))
    def test_monotone(self, u1, u2, family):
        if u1 == u2:
            return
        lo, hi = sorted((u1, u2))
        m = make_marginal(family, 5.0, 0.2)
        assert transform_u_to_physical(lo, m) <= transform_u_to_physical(hi, m)


class TestLhs:
    def test_four_strata(self):
        x = lhs_sample(4, 1, np.random.default_rng(0))
        assert sorted(np.floor(x[:, 0] * 4).astype(int)) == [0, 1, 2, 3]

    def test_single_point(self):
        x = lhs_sample(1, 3, np.random.default_rng(1))
        assert x.shape == (1, 3) and np.all((x > 0) & (x < 1))

    @settings(max_examples=30)
    @given(st.integers(1, 200), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_stratification_every_seed(self, n, dims, seed):
        x = lhs_sample(n, dims, np.random.default_rng(seed))
        assert np.all((x > 0) & (x < 1))
        for col in x.T:
            counts = np.bincount(np.floor(col * n).astype(int), minlength=n)
            assert np.all(counts == 1)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            lhs_sample(0, 2, np.random.default_rng(0))


class TestKarhunenLoeve:
    def test_captured_variance_100_modes(self, oracle):
        kl = kl_expand(MONTHLY, 100)
        assert kl.captured_variance == pytest.approx(oracle["kl_fraction_100"], abs=1e-9)

    def test_full_basis(self):
        assert kl_expand(MONTHLY, 121).captured_variance == pytest.approx(1.0, abs=1e-9)

    def test_long_correlation_is_rank_one(self, oracle):
        spec = ProcessSpec.monthly(12e3, 0.25, 1e6)
        kl = kl_expand(spec, 1)
        assert kl.captured_variance == pytest.approx(oracle["kl_fraction_1_long"], abs=1e-8)
        assert kl.eigenvalues[0] == pytest.approx(kl.all_eigenvalues.sum(), rel=1e-6)

    def test_eigenvalues_descending_and_reconstruct(self):
        kl = kl_expand(MONTHLY, 121)
        assert np.all(np.diff(kl.all_eigenvalues) <= 1e-12)
        modes = kl.modes()
        cov = MONTHLY.covariance()
        assert np.linalg.norm(modes @ modes.T - cov) / np.linalg.norm(cov) < 1e-8

    def test_modes_orthonormal_under_weights(self):
        kl = kl_expand(MONTHLY, 30)
        w = np.full(121, 1.0)
        w[[0, -1]] = 0.5
        gram = kl.eigenvectors.T @ (w[:, None] * kl.eigenvectors)
        assert np.allclose(gram, np.eye(30), atol=1e-10)

    def test_too_many_modes(self):
        with pytest.raises(ValueError):
            kl_expand(MONTHLY, 122)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ProcessSpec(1.0, 0.1, 0.0, (0.0, 1.0))
        with pytest.raises(ValueError):
            ProcessSpec(1.0, 0.1, 1.0, (0.0, 0.0, 1.0))


class TestSampleProcess:
    kl = kl_expand(MONTHLY, 100)

    def test_zero_theta_is_mean(self):
        assert np.all(sample_process(self.kl, np.zeros(100), 12e3) == 12e3)

    def test_linear(self):
        theta = np.random.default_rng(3).standard_normal(100)
        a = sample_process(self.kl, 2 * theta, 12e3) - 12e3
        b = sample_process(self.kl, theta, 12e3) - 12e3
        assert np.allclose(a, 2 * b, rtol=1e-12, atol=1e-9)

    def test_pointwise_variance(self):
        rng = np.random.default_rng(4)
        n = 100_000
        traj = sample_process(self.kl, rng.standard_normal((n, 100)), 12e3)
        # compare each grid point with its own expected variance; 4 sigma over 121 points
        expected = np.sum(self.kl.modes() ** 2, axis=1)
        var = traj.var(axis=0)
        band = 4 * expected * np.sqrt(2.0 / n)
        assert np.all(np.abs(var - expected) < band + 1e-9)
        assert np.mean(expected) / MONTHLY.std**2 == pytest.approx(self.kl.captured_variance, abs=0.02)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sample_process(self.kl, np.zeros(99), 0.0)
