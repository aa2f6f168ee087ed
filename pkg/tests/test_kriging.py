import json

import numpy as np
import pytest

from rbdoemu.kriging import (
    KrigingConfig,
    KrigingModel,
    _finish,
    _Objective,
    fit_kriging,
    kriging_predict_mean,
    matern52,
    mc_quantile,
)
from rbdoemu.prob import make_marginal
from rbdoemu.problem import DesignVariable, InputModel


@pytest.fixture(scope="module")
def sine():
    x = np.linspace(0, 2 * np.pi, 20)[:, None]
    return fit_kriging(x, np.sin(x[:, 0])), x


@pytest.fixture(scope="module")
def field2d():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (40, 2)) * [1.0, 50.0]
    y = np.sin(3 * x[:, 0]) + 0.02 * x[:, 1]
    return fit_kriging(x, y), x, y


def test_matern_at_zero():
    assert matern52(0.0) == 1.0
    r = np.linspace(0, 5, 50)
    assert np.all(np.diff(matern52(r)) < 0)


def test_constant_field():
    x = np.random.default_rng(1).uniform(size=(15, 3))
    m = fit_kriging(x, np.full(15, 4.25))
    pts = np.random.default_rng(2).uniform(-3, 3, (100, 3))
    assert np.all(kriging_predict_mean(m, pts) == 4.25)


def test_interpolates_training_points(field2d):
    m, x, y = field2d
    assert np.max(np.abs(kriging_predict_mean(m, x) - y)) < 1e-8


def test_sine_dense_grid(sine):
    m, _ = sine
    grid = np.linspace(0, 2 * np.pi, 2001)
    assert np.max(np.abs(kriging_predict_mean(m, grid[:, None]) - np.sin(grid))) < 1e-2


def test_far_field_is_trend(field2d):
    m, _, _ = field2d
    far = m.x_mean + 60 * m.lengths.max() * m.x_std * np.ones(2)
    trend = m.y_mean + m.y_std * m.trend
    assert kriging_predict_mean(m, far) == pytest.approx(trend, abs=1e-6)


def test_permutation_invariance(field2d):
    m, x, y = field2d
    perm = np.random.default_rng(3).permutation(len(y))
    # hyperparameters held fixed, only the training order changes
    x_std = (x[perm] - m.x_mean) / m.x_std
    y_std = (y[perm] - m.y_mean) / m.y_std
    shuffled = _finish(x_std, y_std, m.lengths, m.nugget, m.x_mean, m.x_std, m.y_mean, m.y_std, m.loglik)
    pts = np.random.default_rng(4).uniform(0, 1, (200, 2)) * [1.0, 50.0]
    assert np.max(np.abs(kriging_predict_mean(shuffled, pts) - kriging_predict_mean(m, pts))) < 1e-10


def test_mean_linear_in_outputs(field2d):
    m, x, y = field2d
    z = (x - m.x_mean) / m.x_std
    y2 = np.cos(x[:, 0]) * 2.0

    def fixed(values):
        return _finish(z, values, m.lengths, m.nugget, m.x_mean, m.x_std, 0.0, 1.0, 0.0)

    pts = np.random.default_rng(5).uniform(0, 1, (50, 2)) * [1.0, 50.0]
    both = kriging_predict_mean(fixed(y + y2), pts)
    parts = kriging_predict_mean(fixed(y), pts) + kriging_predict_mean(fixed(y2), pts)
    assert np.allclose(both, parts, atol=1e-10)


def test_loglik_beats_every_start(field2d):
    m, x, y = field2d
    cfg = KrigingConfig()
    obj = _Objective(m.x, m.y, m.nugget)
    rng = np.random.default_rng(cfg.seed)
    starts = [np.zeros(2)] + [rng.uniform(*cfg.log_length_bounds, 2) for _ in range(cfg.n_starts - 1)]
    assert all(m.loglik >= -0.5 * obj(s)[0] - 1e-9 for s in starts)
    assert np.all(m.lengths > 0)


def test_gradient_matches_finite_differences(field2d):
    m, _, _ = field2d
    obj = _Objective(m.x, m.y, 1e-8)
    p = np.array([-0.3, 0.4])
    _, g = obj(p)
    h = 1e-6
    fd = [(obj(p + h * e)[0] - obj(p - h * e)[0]) / (2 * h) for e in np.eye(2)]
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-6)


def test_serialization(field2d):
    m, _, _ = field2d
    back = KrigingModel.from_dict(json.loads(json.dumps(m.to_dict())))
    pts = np.random.default_rng(6).uniform(0, 1, (20, 2)) * [1.0, 50.0]
    assert np.allclose(kriging_predict_mean(back, pts), kriging_predict_mean(m, pts), rtol=0, atol=1e-12)


def test_dimension_mismatch(field2d):
    with pytest.raises(ValueError, match="dims"):
        kriging_predict_mean(field2d[0], np.zeros(3))


def test_too_few_points():
    with pytest.raises(ValueError):
        fit_kriging(np.zeros((3, 2)), np.zeros(3))


def test_duplicate_rows_fall_back_to_nugget():
    x = np.repeat(np.linspace(0, 1, 8)[:, None], 2, axis=0)
    m = fit_kriging(x, np.sin(x[:, 0]))
    assert m.nugget > 0
    assert kriging_predict_mean(m, np.array([0.5])) == pytest.approx(np.sin(0.5), abs=1e-3)


NORMAL = InputModel((DesignVariable("d"),), (("z", make_marginal("gaussian", 0.0, std=1.0)),))


def identity(w):
    return w[:, 1]


class TestMcQuantile:
    def test_normal_median(self):
        assert abs(mc_quantile(identity, np.array([0.0]), NORMAL, 1_000_000, 0.5, 7)) < 0.005

    def test_crn_determinism(self):
        a = mc_quantile(identity, np.array([0.3]), NORMAL, 10_000, 0.05, 11)
        b = mc_quantile(identity, np.array([0.3]), NORMAL, 10_000, 0.05, 11)
        assert a == b

    def test_same_draws_for_every_design(self):
        def shifted(w):
            return w[:, 0] + w[:, 1]

        a = mc_quantile(shifted, np.array([0.0]), NORMAL, 5000, 0.1, 3)
        b = mc_quantile(shifted, np.array([1.5]), NORMAL, 5000, 0.1, 3)
        assert b - a == pytest.approx(1.5, abs=1e-12)

    def test_smallest_order_statistic(self):
        n = 1000
        z = np.concatenate(list(NORMAL.crn_blocks(n, 5)))[:, 0]
        assert mc_quantile(identity, np.array([0.0]), NORMAL, n, 1 / n, 5) == z.min()

    def test_lower_order_statistic(self):
        n = 1000
        z = np.sort(np.concatenate(list(NORMAL.crn_blocks(n, 5)))[:, 0])
        assert mc_quantile(identity, np.array([0.0]), NORMAL, n, 0.0125, 5) == z[12]

    @pytest.mark.parametrize("n, alpha", [(50, 0.5), (1000, 1e-4), (1000, 0.0)])
    def test_rejects_bad_sizes(self, n, alpha):
        with pytest.raises(ValueError):
            mc_quantile(identity, np.array([0.0]), NORMAL, n, alpha, 0)

    def test_evaluator_error_propagates(self):
        def broken(w):
            raise FloatingPointError("limit state blew up")

        with pytest.raises(FloatingPointError):
            mc_quantile(broken, np.array([0.0]), NORMAL, 100, 0.5, 0)
