import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rbdoemu import gld
from rbdoemu.glam import (
    GlamModel,
    _Likelihood,
    fit_glam,
    glam_conditional_cdf,
    glam_conditional_pdf,
    glam_conditional_quantile,
    glam_sample,
)
from rbdoemu.pce import DesignBox, build_truncation, eval_basis

BOX = DesignBox(np.array([0.0, -2.0]), np.array([1.0, 2.0]))


def constant_model(lam1, lam2, lam3, lam4, box=BOX):
    const = build_truncation(box.n_dims, 0)
    coefs = (np.array([lam1]), np.array([np.log(lam2)]), np.array([lam3]), np.array([lam4]))
    return GlamModel(box, (const,) * 4, coefs)


def linear_scale_model():
    lin = build_truncation(2, 1)
    coefs = (np.array([1.0, 0.5, -0.3]), np.array([0.2, 0.3, 0.0]), np.array([0.2, 0.05, 0.0]),
             np.array([0.1, 0.0, -0.05]))
    return GlamModel(BOX, (lin,) * 4, coefs)


@pytest.fixture(scope="module")
def iid_fit():
    rng = np.random.default_rng(11)
    n = 2000
    d = BOX.from_unit(rng.uniform(-1, 1, (n, 2)))
    y = gld.quantile(rng.uniform(size=n), 0.0, 1.0, 0.13, 0.13)
    return fit_glam(d, y, BOX), d, y


@pytest.fixture(scope="module")
def hetero_fit():
    # location, scale and skewness all vary with the design
    rng = np.random.default_rng(12)
    n = 600
    d = BOX.from_unit(rng.uniform(-1, 1, (n, 2)))
    x = BOX.to_unit(d)
    y = gld.quantile(rng.uniform(size=n), 2 * x[:, 0] + x[:, 1] ** 2, np.exp(1.0 + 0.5 * x[:, 1]),
                     0.15 + 0.1 * x[:, 0], 0.15)
    return fit_glam(d, y, BOX), d, y


class TestQuantile:
    def test_uniform_constant_model(self):
        m = constant_model(0, 1, 1, 1)
        assert glam_conditional_quantile(m, np.array([0.5, 0.0]), 0.05) == pytest.approx(-0.9, abs=1e-15)

    def test_symmetric_median_is_location(self):
        m = linear_scale_model()
        lin = build_truncation(2, 1)
        sym = GlamModel(BOX, (lin,) * 4, m.coefs[:2] + (m.coefs[2], m.coefs[2]))
        d = np.array([[0.3, 1.0], [0.9, -1.5]])
        lam1 = eval_basis(lin, "legendre", BOX.to_unit(d)) @ sym.coefs[0]
        assert np.allclose(glam_conditional_quantile(sym, d, 0.5), lam1, atol=1e-14)

    def test_monotone_in_alpha(self):
        m = linear_scale_model()
        alphas = np.linspace(0.001, 0.999, 200)
        for d in ([0.0, -2.0], [0.5, 0.3], [1.0, 2.0]):
            q = glam_conditional_quantile(m, np.array(d), alphas)
            assert np.all(np.diff(q) > 0)

    def test_outside_domain(self):
        with pytest.raises(ValueError, match="extrapolation"):
            glam_conditional_quantile(constant_model(0, 1, 0.1, 0.1), np.array([2.0, 0.0]), 0.5)

    @pytest.mark.parametrize("alpha", [0.0, 1.0])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            glam_conditional_quantile(constant_model(0, 1, 0.1, 0.1), np.array([0.5, 0.0]), alpha)


class TestDistribution:
    def test_sample_mean_uniform(self):
        m = constant_model(0, 1, 1, 1)
        x = glam_sample(m, np.array([0.5, 0.0]), 100_000, np.random.default_rng(0))
        assert abs(x.mean()) < 3 * np.sqrt(1 / 3) / np.sqrt(x.size)

    def test_pdf_integrates_to_one(self):
        m = linear_scale_model()
        rng = np.random.default_rng(1)
        for d in BOX.from_unit(rng.uniform(-1, 1, (5, 2))):
            lam = [float(v) for v in m.lambdas(d)]
            lo, hi = gld.quantile(1e-12, *lam), gld.quantile(1 - 1e-12, *lam)
            val, _ = integrate.quad(lambda y: float(glam_conditional_pdf(m, d, y)), lo, hi, limit=400, epsabs=1e-12)
            assert val == pytest.approx(1.0, abs=1e-6)

    def test_sampled_quantile_matches(self):
        m = linear_scale_model()
        d = np.array([0.2, 0.7])
        x = glam_sample(m, d, 1_000_000, np.random.default_rng(2))
        q = float(glam_conditional_quantile(m, d, 0.05))
        # binomial band on the empirical cdf at the analytic quantile
        assert abs(np.mean(x <= q) - 0.05) < 4 * np.sqrt(0.05 * 0.95 / x.size)

    def test_cdf_inverts_quantile(self):
        m = linear_scale_model()
        d = np.array([0.8, -1.0])
        a = np.array([0.01, 0.3, 0.9])
        assert np.allclose(glam_conditional_cdf(m, d, glam_conditional_quantile(m, d, a)), a, atol=1e-10)


class TestLikelihood:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(-0.5, 0.5), st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.integers(0, 1000))
    def test_gradient_matches_finite_differences(self, c2, s3, s4, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, (60, 2))
        y = 0.5 * x[:, 0] + 0.2 * rng.standard_normal(60)
        s1 = build_truncation(2, 1)
        psi = eval_basis(s1, "legendre", x)
        lik = _Likelihood([psi] * 4, y)
        c = np.concatenate([[0, 0.5, 0], [c2 + 1.0, 0, 0], [s3 * 0.9, 0.05, 0], [s4 * 0.9, 0, 0.05]])
        f, g = lik(c)
        if not np.isfinite(f):
            return  # some responses outside the support: the likelihood is -inf there by design
        h = 1e-6
        e = np.eye(c.size)
        fd = np.array([(lik(c + h * e[i])[0] - lik(c - h * e[i])[0]) / (2 * h) for i in range(c.size)])
        assert np.allclose(g, fd, rtol=1e-4, atol=1e-4 * (1 + np.max(np.abs(g))))

    def test_infeasible_is_infinite(self):
        psi = np.ones((30, 1))
        lik = _Likelihood([psi] * 4, np.linspace(-5, 5, 30))
        f, _ = lik(np.array([0.0, 0.0, 0.5, 0.5]))  # support [-2, 2]
        assert f == np.inf


class TestFit:
    def test_recovers_constant_gld(self, iid_fit):
        m, _, _ = iid_fit
        assert m.diagnostics["shape_degree"] == 0 and m.diagnostics["lam2_degree"] == 0
        rng = np.random.default_rng(3)
        d = BOX.from_unit(rng.uniform(-1, 1, (20, 2)))
        lam = np.array([np.broadcast_to(v, (20,)) for v in m.lambdas(d)])
        for got, want in zip(lam, (0.0, 1.0, 0.13, 0.13)):
            assert np.all(np.abs(got - want) < 0.1)

    def test_loglik_at_least_constant(self, iid_fit, hetero_fit):
        for m, _, _ in (iid_fit, hetero_fit):
            assert m.diagnostics["loglik"] >= m.diagnostics["constant_loglik"] - 1e-9

    def test_hetero_picks_structure(self, hetero_fit):
        m, _, _ = hetero_fit
        assert m.diagnostics["lam2_degree"] >= 1
        assert m.diagnostics["loglik"] > m.diagnostics["constant_loglik"] + 50

    def test_reported_loglik_is_data_likelihood(self, hetero_fit):
        m, d, y = hetero_fit
        lam = m.lambdas(d)
        assert np.sum(gld.logpdf(y, *lam)) == pytest.approx(m.diagnostics["loglik"], rel=1e-9, abs=1e-6)

    def test_deterministic_linear_data(self):
        rng = np.random.default_rng(4)
        box = DesignBox(np.array([0.0]), np.array([1.0]))
        d = rng.uniform(0, 1, (200, 1))
        y = d[:, 0] + 1e-6 * rng.standard_normal(200)
        m = fit_glam(d, y, box)
        grid = np.linspace(0, 1, 11)[:, None]
        lam1, lam2, _, _ = m.lambdas(grid)
        assert np.allclose(lam1, grid[:, 0], atol=1e-4)
        assert np.all(1.0 / lam2 < 1e-3)

    def test_bit_reproducible(self, hetero_fit):
        m, d, y = hetero_fit
        again = fit_glam(d, y, BOX)
        assert all(np.array_equal(a, b) for a, b in zip(m.coefs, again.coefs))

    def test_serialization(self, hetero_fit):
        m, _, _ = hetero_fit
        back = GlamModel.from_dict(json.loads(json.dumps(m.to_dict())))
        d = np.array([[0.1, 0.1], [0.9, -1.9]])
        assert np.array_equal(glam_conditional_quantile(back, d, 0.05), glam_conditional_quantile(m, d, 0.05))

    def test_rejects_bad_data(self):
        d = np.full((30, 2), 0.5)
        with pytest.raises(ValueError, match="identical"):
            fit_glam(d, np.ones(30), BOX)
        with pytest.raises(ValueError, match="20"):
            fit_glam(d[:10], np.arange(10.0), BOX)
        with pytest.raises(ValueError, match="finite"):
            fit_glam(d, np.r_[np.nan, np.arange(29.0)], BOX)
