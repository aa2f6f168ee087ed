"""Ordinary Kriging with an anisotropic Matern 5/2 kernel, and Monte Carlo
quantiles with common random numbers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_SQRT5 = math.sqrt(5.0)
_NUGGETS = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
_CHUNK = 10_000


@dataclass(frozen=True)
class KrigingConfig:
    n_starts: int = 10
    log_length_bounds: tuple[float, float] = (math.log(0.05), math.log(20.0))
    max_eval: int | None = None  # per start; None means unlimited
    seed: int = 0


def matern52(r):
    """Matern 5/2 correlation at scaled distance ``r``."""
    r = np.asarray(r, dtype=float)
    return (1.0 + _SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-_SQRT5 * r)


def _scaled_sq(a, b, lengths):
    """Squared anisotropic distances between rows of ``a`` and ``b``."""
    a = a / lengths
    b = b / lengths
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


@dataclass(frozen=True)
class KrigingModel:
    x: np.ndarray  # standardized training inputs
    y: np.ndarray  # standardized training outputs
    lengths: np.ndarray
    nugget: float
    trend: float  # standardized units
    variance: float  # standardized units
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    weights: np.ndarray  # R^-1 (y - trend)
    loglik: float

    @property
    def n_dims(self) -> int:
        return self.x.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": "kriging",
            "version": FORMAT_VERSION,
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "lengths": self.lengths.tolist(),
            "nugget": self.nugget,
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "loglik": self.loglik,
        }

    @classmethod
    def from_dict(cls, data: dict) -> KrigingModel:
        if data.get("kind") != "kriging" or data.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 Kriging document")
        x = np.asarray(data["x"], dtype=float)
        y = np.asarray(data["y"], dtype=float)
        lengths = np.asarray(data["lengths"], dtype=float)
        fit = _profile(x, y, lengths, data["nugget"])
        return cls(x, y, lengths, data["nugget"], fit.trend, fit.variance,
                   np.asarray(data["x_mean"], dtype=float), np.asarray(data["x_std"], dtype=float),
                   float(data["y_mean"]), float(data["y_std"]), fit.weights, float(data["loglik"]))


@dataclass
class _Profile:
    trend: float
    variance: float
    weights: np.ndarray
    neg2ll: float
    chol: tuple
    corr: np.ndarray


def _profile(x, y, lengths, nugget) -> _Profile:
    n = y.size
    r = matern52(np.sqrt(_scaled_sq(x, x, lengths)))
    r[np.diag_indices(n)] += nugget
    c = cho_factor(r, lower=True)
    ones = np.ones(n)
    ri1 = cho_solve(c, ones)
    riy = cho_solve(c, y)
    trend = float(ones @ riy / (ones @ ri1))
    w = riy - trend * ri1
    resid = y - trend
    variance = max(float(resid @ w) / n, 1e-300)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    return _Profile(trend, variance, w, n * math.log(variance) + logdet, c, r)


class _Objective:
    """Profiled -2 log-likelihood in log-lengthscales, with its gradient."""

    def __init__(self, x, y, nugget):
        self.x, self.y, self.nugget = x, y, nugget
        self.diff2 = (x[:, None, :] - x[None, :, :]) ** 2 if x.shape[0] * x.shape[0] * x.shape[1] < 3e7 else None
        self.n_eval = 0

    def __call__(self, log_l):
        self.n_eval += 1
        lengths = np.exp(log_l)
        try:
            p = _profile(self.x, self.y, lengths, self.nugget)
        except np.linalg.LinAlgError:
            return 1e300, np.zeros_like(log_l)
        n = self.y.size
        r = np.sqrt(_scaled_sq(self.x, self.x, lengths))
        # d corr / d log l_k = (5/3)(1 + sqrt5 r) exp(-sqrt5 r) (dx_k / l_k)^2
        base = 5.0 / 3.0 * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
        rinv = cho_solve(p.chol, np.eye(n))
        a = np.outer(p.weights, p.weights) / p.variance
        m = (rinv - a) * base
        grad = np.empty_like(log_l)
        for k in range(log_l.size):
            if self.diff2 is not None:
                dk = self.diff2[:, :, k]
            else:
                col = self.x[:, k]
                dk = (col[:, None] - col[None, :]) ** 2
            grad[k] = np.sum(m * dk) / lengths[k] ** 2
        return p.neg2ll, grad


def fit_kriging(inputs, outputs, config: KrigingConfig | None = None) -> KrigingModel:
    """Maximum-likelihood ordinary Kriging with multi-start L-BFGS-B on the log-lengthscales."""
    config = config or KrigingConfig()
    x_raw = np.atleast_2d(np.asarray(inputs, dtype=float))
    y_raw = np.asarray(outputs, dtype=float).ravel()
    n, n_dims = x_raw.shape
    if y_raw.size != n:
        raise ValueError("one output per input row required")
    if n < n_dims + 2:
        raise ValueError(f"need at least n_dims + 2 = {n_dims + 2} training points")
    if not (np.all(np.isfinite(x_raw)) and np.all(np.isfinite(y_raw))):
        raise ValueError("training data must be finite")
    x_mean = x_raw.mean(axis=0)
    x_std = x_raw.std(axis=0)
    x_std = np.where(x_std > 0, x_std, 1.0)
    y_mean = float(y_raw.mean())
    y_std = float(y_raw.std())
    x = (x_raw - x_mean) / x_std
    if y_std == 0:
        # constant field: trend carries everything
        lengths = np.ones(n_dims)
        return _finish(x, np.zeros(n), lengths, _NUGGETS[0], x_mean, x_std, y_mean, 1.0, 0.0)
    y = (y_raw - y_mean) / y_std

    lo, hi = config.log_length_bounds
    rng = np.random.default_rng(config.seed)
    starts = [np.zeros(n_dims)]
    starts += [rng.uniform(lo, hi, n_dims) for _ in range(config.n_starts - 1)]
    options = {"maxfun": config.max_eval} if config.max_eval else {}

    for nugget in _NUGGETS:
        obj = _Objective(x, y, nugget)
        best = None
        for s in starts:
            f0, _ = obj(s)
            if f0 >= 1e300:
                continue
            res = minimize(obj, s, jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * n_dims, options=options)
            cand = (res.fun, res.x) if res.fun <= f0 else (f0, s)
            if best is None or cand[0] < best[0]:
                best = cand
        if best is not None:
            try:
                return _finish(x, y, np.exp(best[1]), nugget, x_mean, x_std, y_mean, y_std, -0.5 * best[0])
            except np.linalg.LinAlgError:
                pass
        log.info("Kriging correlation matrix not positive definite at nugget %g; escalating", nugget)
    raise np.linalg.LinAlgError("Kriging factorization failed at the maximum nugget")


def _finish(x, y, lengths, nugget, x_mean, x_std, y_mean, y_std, loglik) -> KrigingModel:
    p = _profile(x, y, lengths, nugget)
    return KrigingModel(x, y, lengths, nugget, p.trend, p.variance, x_mean, x_std, y_mean, y_std,
                        p.weights, float(loglik))


def kriging_predict_mean(m: KrigingModel, points) -> np.ndarray:
    """Posterior mean, evaluated in chunks to bound memory."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != m.n_dims:
        raise ValueError(f"points have {pts.shape[1]} dims, model has {m.n_dims}")
    z = (pts - m.x_mean) / m.x_std
    out = np.empty(z.shape[0])
    for i in range(0, z.shape[0], _CHUNK):
        k = matern52(np.sqrt(_scaled_sq(z[i:i + _CHUNK], m.x, m.lengths)))
        out[i:i + _CHUNK] = m.trend + k @ m.weights
    out = m.y_mean + m.y_std * out
    return float(out[0]) if single else out


def mc_quantile(evaluator, d, input_model, n_mc: int, alpha: float, crn_seed: int) -> float:
    """Lower empirical alpha-quantile of ``evaluator`` over ``n_mc`` input draws at design ``d``.

    ``input_model.crn_inputs(d, n, seed)`` yields blocks of augmented inputs
    built from the same standard normal draws for every design, which keeps
    the estimate a deterministic, piecewise smooth function of ``d``.
    """
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    if not 0 < alpha < 1 or alpha * n_mc < 1:
        raise ValueError("need 0 < alpha < 1 and alpha * n_mc >= 1")
    values = np.concatenate([np.asarray(evaluator(w), dtype=float).ravel()
                             for w in input_model.crn_inputs(d, n_mc, crn_seed)])
    k = math.ceil(alpha * n_mc - 1e-9)
    return float(np.partition(values, k - 1)[k - 1])
