"""Stochastic polynomial chaos expansions.

The response is modelled as a PCE in the design variables plus one standard
normal latent variable, with additive Gaussian noise of scale ``sigma``. The
latent variable is integrated out with Gauss-Hermite quadrature, which gives
the conditional density, CDF and failure probability in semi-closed form.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri_exp

from .pce import (
    DesignBox,
    MultiIndexSet,
    QuadratureRule,
    build_truncation,
    eval_basis,
    gauss_quadrature,
    select_trend,
    univariate,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
# uniform evaluation grid for the latent variable: half-width, step bounds, slope probe
_GRID_HALF_WIDTH = 8.5
_GRID_STEP_MAX = 0.25
_GRID_STEP_MIN = _GRID_STEP_MAX / 128
_SLOPE_PROBE = np.linspace(-6.0, 6.0, 2401)


@dataclass(frozen=True)
class SpceConfig:
    degrees: tuple[int, ...] = tuple(range(1, 16))
    q_norms: tuple[float, ...] = (0.8, 0.9, 1.0)
    n_quad: int = 128
    n_folds: int = 5
    sigma_min_rel: float = 1e-6
    sigma_grid_factor: float = 3.0
    sigma_log_tol: float = 0.1
    max_iter: int = 500
    rel_tol: float = 1e-8
    early_stop: int = 2
    max_terms_ratio: float = 0.5  # candidate bases need fewer than ratio * N terms
    fold_seed: int = 0


@dataclass(frozen=True)
class SpceModel:
    box: DesignBox
    basis: MultiIndexSet  # design dims first, latent dim last
    coef: np.ndarray
    sigma: float
    n_quad: int = 128
    diagnostics: dict = field(default_factory=dict)
    eval_step: float | None = None  # uniform latent grid for evaluation; Gauss-Hermite when None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("noise scale sigma must be positive")
        if self.eval_step is not None and not _GRID_STEP_MIN <= self.eval_step <= _GRID_STEP_MAX:
            raise ValueError(f"eval_step must lie in [{_GRID_STEP_MIN}, {_GRID_STEP_MAX}]")

    @property
    def quadrature(self):
        return _rule(self.n_quad) if self.eval_step is None else _grid_rule(self.eval_step)

    def latent_map(self, d, n_quad: int | None = None) -> np.ndarray:
        """PCE values M(d, xi_j) at the evaluation nodes; shape ``d.shape[:-1] + (n_nodes,)``.

        An explicit ``n_quad`` selects a Gauss-Hermite rule of that size instead.
        """
        d = self.box.check(d)
        rule = _rule(n_quad) if n_quad else self.quadrature
        return _latent_values(self.basis, self.coef, self.box.to_unit(d), rule.nodes)

    def evaluate(self, d, xi) -> np.ndarray:
        """PCE value at designs ``d`` (n, n_d) paired with latent values ``xi`` (n,)."""
        d = self.box.check(d)
        x = self.box.to_unit(d)
        pts = np.column_stack([np.atleast_2d(x), np.asarray(xi, dtype=float).ravel()])
        return eval_basis(self.basis, _kinds(self.box.n_dims), pts) @ self.coef

    def to_dict(self) -> dict:
        return {
            "kind": "spce",
            "version": FORMAT_VERSION,
            "box": self.box.to_dict(),
            "basis": self.basis.to_dict(),
            "coef": self.coef.tolist(),
            "sigma": self.sigma,
            "n_quad": self.n_quad,
            "eval_step": self.eval_step,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SpceModel:
        if data.get("kind") != "spce" or data.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 SPCE document")
        return cls(DesignBox.from_dict(data["box"]), MultiIndexSet.from_dict(data["basis"]),
                   np.asarray(data["coef"], dtype=float), float(data["sigma"]), int(data["n_quad"]),
                   data.get("diagnostics", {}), data.get("eval_step"))


_RULES: dict[int, object] = {}


def _rule(n: int):
    if n not in _RULES:
        _RULES[n] = gauss_quadrature("hermite", n)
    return _RULES[n]


def _grid_rule(step: float) -> QuadratureRule:
    """Trapezoid rule for the standard normal law on a uniform grid over +-8.5."""
    if step not in _RULES:
        n_half = int(np.ceil(_GRID_HALF_WIDTH / step))
        nodes = np.linspace(-_GRID_HALF_WIDTH, _GRID_HALF_WIDTH, 2 * n_half + 1)
        w = np.exp(-0.5 * nodes**2)
        _RULES[step] = QuadratureRule(nodes, w / w.sum(), "hermite")
    return _RULES[step]


def evaluation_step(basis: MultiIndexSet, coef, sigma: float, x_unit) -> float:
    """Latent grid step that resolves the conditional law at the given designs.

    For fixed d the CDF integrand Phi((y - M(d, xi)) / sigma) is a step of
    width sigma / |dM/dxi| in xi, and a Gauss-Hermite rule aliases it once its
    node spacing exceeds that width. The trapezoid rule on a uniform grid is
    spectrally accurate for such Gaussian-smoothed steps, with error of order
    exp(-2 pi^2 (width / step)^2), so half the narrowest width is ample and
    leaves a margin for designs steeper than the training ones.
    """
    m = _latent_values(basis, np.asarray(coef, dtype=float), np.atleast_2d(x_unit), _SLOPE_PROBE)
    slope = float(np.max(np.abs(np.diff(m, axis=-1)))) / (_SLOPE_PROBE[1] - _SLOPE_PROBE[0])
    if slope == 0.0:
        return _GRID_STEP_MAX
    # snap to a power-of-two fraction so nearby fits share cached rules
    step = 0.5 * sigma / slope
    step = _GRID_STEP_MAX * 2.0 ** np.floor(np.log2(step / _GRID_STEP_MAX))
    return float(np.clip(step, _GRID_STEP_MIN, _GRID_STEP_MAX))


def _fit_rule(n: int):
    """Quadrature nodes whose weight is not negligible in double precision."""
    rule = _rule(n)
    keep = rule.weights > 1e-17 * rule.weights.max()
    return rule.nodes[keep], rule.weights[keep]


def _kinds(n_design: int):
    return ["legendre"] * n_design + ["hermite"]


def _split_basis(basis: MultiIndexSet, x_unit, nodes):
    """Design factor (..., P) and latent factor (n_quad, P) of every basis term."""
    design = MultiIndexSet(basis.n_dims - 1, basis.indices[:, :-1], basis.max_degree, basis.q_norm)
    psi_d = eval_basis(design, "legendre", x_unit)
    lat_deg = basis.indices[:, -1]
    psi_l = univariate("hermite", nodes, int(lat_deg.max()))[:, lat_deg]
    return psi_d, psi_l


def _latent_values(basis, coef, x_unit, nodes):
    psi_d, psi_l = _split_basis(basis, x_unit, nodes)
    return (psi_d * coef) @ psi_l.T


class _Likelihood:
    """Quadrature log-likelihood for fixed sigma, with gradient in the coefficients."""

    def __init__(self, psi_d, psi_l, log_w, y):
        self.psi_d = psi_d
        self.psi_l = psi_l
        self.log_w = log_w
        self.y = y

    def _terms(self, c, sigma):
        m = (self.psi_d * c) @ self.psi_l.T
        e = (self.y[:, None] - m) / sigma
        a = self.log_w - 0.5 * e * e
        top = a.max(axis=1, keepdims=True)
        r = np.exp(a - top)
        tot = r.sum(axis=1, keepdims=True)
        lse = np.log(tot[:, 0]) + top[:, 0]
        return e, r / tot, lse

    def pointwise(self, c, sigma):
        _, _, lse = self._terms(c, sigma)
        return lse - np.log(sigma) - _LOG_SQRT_2PI

    def neg(self, c, sigma):
        e, r, lse = self._terms(c, sigma)
        weighted = (r * e) / sigma  # r: posterior weights of the quadrature nodes
        grad = np.sum(self.psi_d * (weighted @ self.psi_l), axis=0)
        f = np.sum(lse) - self.y.size * (np.log(sigma) + _LOG_SQRT_2PI)
        return -f, -grad

    def fit(self, c0, sigma, config):
        res = minimize(self.neg, c0, args=(sigma,), jac=True, method="L-BFGS-B",
                       options={"maxiter": config.max_iter, "ftol": config.rel_tol, "gtol": 1e-7})
        return res.x, -res.fun, bool(res.success)


def _validate(design_points, responses, box):
    d = np.atleast_2d(np.asarray(design_points, dtype=float))
    y = np.asarray(responses, dtype=float).ravel()
    if d.shape[0] != y.size:
        raise ValueError("one response per design point required")
    if y.size < 20:
        raise ValueError("at least 20 design points are required")
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")
    box.check(d)
    if np.ptp(y) == 0:
        raise ValueError("degenerate data: all responses identical")
    return d, y


def _folds(n: int, k: int, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(perm[i::k]) for i in range(k)]


class _CrossValidator:
    """K-fold validation likelihood of one basis as a function of log sigma.

    Fold coefficients are warm-started from the closest sigma evaluated so far.
    """

    def __init__(self, basis, x, y, folds, c0, config):
        self.config = config
        nodes, weights = _fit_rule(config.n_quad)
        psi_d, psi_l = _split_basis(basis, x, nodes)
        log_w = np.log(weights)
        self.parts = []
        for val in folds:
            train = np.setdiff1d(np.arange(y.size), val)
            self.parts.append((_Likelihood(psi_d[train], psi_l, log_w, y[train]),
                               _Likelihood(psi_d[val], psi_l, log_w, y[val])))
        self.c0 = c0
        self.cache: dict[float, tuple[float, list]] = {}

    def score(self, log_sigma: float) -> float:
        key = float(log_sigma)
        if key in self.cache:
            return self.cache[key][0]
        sigma = np.exp(log_sigma)
        if self.cache:
            near = min(self.cache, key=lambda s: abs(s - key))
            starts = self.cache[near][1]
        else:
            starts = [self.c0] * len(self.parts)
        total, coefs = 0.0, []
        for (train, val), c_start in zip(self.parts, starts):
            c, _, _ = train.fit(c_start, sigma, self.config)
            coefs.append(c)
            total += float(np.sum(val.pointwise(c, sigma)))
        self.cache[key] = (total, coefs)
        return total

    def best_sigma(self, log_hi: float, log_lo: float) -> tuple[float, float]:
        """Descending grid until the score drops twice, then golden refinement."""
        step = np.log(self.config.sigma_grid_factor)
        grid = [log_hi]
        while grid[-1] - step > log_lo:
            grid.append(grid[-1] - step)
        grid.append(log_lo)
        scores = []
        for g in grid:
            scores.append(self.score(g))
            if len(scores) >= 3 and scores[-1] < scores[-2] < scores[-3]:
                break
        i = int(np.argmax(scores))
        lo = grid[min(i + 1, len(scores) - 1)]
        hi = grid[max(i - 1, 0)]
        if hi - lo > self.config.sigma_log_tol:
            res = minimize_scalar(lambda s: -self.score(s), bounds=(lo, hi), method="bounded",
                                  options={"xatol": self.config.sigma_log_tol})
            if -res.fun > scores[i]:
                return float(res.x), float(-res.fun)
        return float(grid[i]), float(scores[i])


def _candidate_bases(n_design: int, config: SpceConfig, n_points: int):
    seen = set()
    for deg in config.degrees:
        group = []
        for q in config.q_norms:
            b = build_truncation(n_design + 1, deg, q)
            if b.key() in seen or len(b) >= config.max_terms_ratio * n_points:
                continue
            seen.add(b.key())
            group.append(b)
        yield deg, group


def fit_spce(design_points, responses, box: DesignBox, config: SpceConfig | None = None) -> SpceModel:
    """Maximum-likelihood SPCE with basis and noise scale chosen by cross-validated likelihood."""
    config = config or SpceConfig()
    d, y = _validate(design_points, responses, box)
    n, n_design = d.shape
    shift, scale = float(np.mean(y)), float(np.std(y))
    ys = (y - shift) / scale
    x = box.to_unit(d)

    trend_set, trend_coef, _ = select_trend(x, ys, "legendre", config.degrees, (1.0,), config.early_stop)
    resid_sd = max(float(np.std(ys - eval_basis(trend_set, "legendre", x) @ trend_coef)), 1e-10)
    folds = _folds(n, config.n_folds, config.fold_seed)
    log_lo = np.log(config.sigma_min_rel)
    log_hi = np.log(max(resid_sd, 1e-3))

    trend_pos = {b + (0,): c for b, c in zip(map(tuple, trend_set.indices.tolist()), trend_coef)}
    latent_lin = (0,) * n_design + (1,)

    def start(basis):
        c0 = np.array([trend_pos.get(tuple(b), 0.0) for b in basis.indices.tolist()])
        c0[basis.position()[latent_lin]] = resid_sd
        return c0

    best = None
    history = []
    stall = 0
    for deg, group in _candidate_bases(n_design, config, n):
        if not group:
            stall += 1
            if stall >= config.early_stop:
                break
            continue
        improved = False
        for basis in group:
            cv = _CrossValidator(basis, x, ys, folds, start(basis), config)
            log_sigma, score = cv.best_sigma(log_hi, log_lo)
            history.append({"degree": deg, "q_norm": basis.q_norm, "n_terms": len(basis),
                            "sigma": float(np.exp(log_sigma) * scale),
                            "cv_loglik": float(score - n * np.log(scale))})
            if best is None or score > best[0] + 1e-9:
                best = (score, basis, log_sigma, cv)
                improved = True
        stall = 0 if improved else stall + 1
        if stall >= config.early_stop:
            break

    score, basis, log_sigma, cv = best
    sigma = float(np.exp(log_sigma))
    nodes, weights = _fit_rule(config.n_quad)
    psi_d, psi_l = _split_basis(basis, x, nodes)
    full = _Likelihood(psi_d, psi_l, np.log(weights), ys)
    fold_coefs = cv.cache[min(cv.cache, key=lambda s: abs(s - log_sigma))][1]
    c, loglik, ok = full.fit(np.mean(fold_coefs, axis=0), sigma, config)
    clamped = log_sigma <= log_lo + 1e-9

    coef = c * scale
    coef[0] += shift
    lat_terms = basis.indices[:, -1] > 0
    diagnostics = {
        "loglik": float(loglik - n * np.log(scale)),
        "cv_loglik": float(score - n * np.log(scale)),
        "degree": int(basis.max_degree),
        "q_norm": float(basis.q_norm),
        "n_terms": len(basis),
        "converged": ok,
        "sigma_clamped": bool(clamped),
        "latent_present": bool(np.any(lat_terms & (np.abs(coef) > 0))),
        "n_points": int(n),
        "candidates": history,
    }
    if clamped:
        log.warning("SPCE noise scale hit its lower bound")
    step = evaluation_step(basis, coef, sigma * scale, x)
    diagnostics["eval_nodes"] = _grid_rule(step).size
    return SpceModel(box, basis, coef, sigma * scale, config.n_quad, diagnostics, step)


def _as_batch(d):
    d = np.asarray(d, dtype=float)
    return d, d.ndim == 1


def spce_conditional_pdf(m: SpceModel, d, y):
    """Gaussian mixture over the quadrature nodes; ``y`` broadcasts against the design batch."""
    mm = m.latent_map(d)
    w = m.quadrature.weights
    e = (np.asarray(y, dtype=float)[..., None] - mm) / m.sigma
    return np.sum(w * np.exp(-0.5 * e * e), axis=-1) / (m.sigma * np.sqrt(2 * np.pi))


def spce_conditional_cdf(m: SpceModel, d, y):
    mm = m.latent_map(d)
    w = m.quadrature.weights
    return np.sum(w * ndtr((np.asarray(y, dtype=float)[..., None] - mm) / m.sigma), axis=-1)


def spce_failure_probability(m: SpceModel, d):
    """Probability of a non-positive response: the conditional CDF at zero."""
    return spce_conditional_cdf(m, d, 0.0)


def spce_log_failure_probability(m: SpceModel, d):
    """log of the failure probability, finite even when the probability underflows."""
    mm = m.latent_map(d)
    return logsumexp(np.log(m.quadrature.weights) + log_ndtr(-mm / m.sigma), axis=-1)


def spce_probit_failure_probability(m: SpceModel, d):
    """Phi^-1 of the failure probability, accurate at both ends of (0, 1).

    Whichever of pf and 1 - pf is smaller is computed in log space and inverted
    with ``ndtri_exp``, so the value stays informative where pf itself
    saturates at 0 or 1.
    """
    mm = m.latent_map(d)
    log_w = np.log(m.quadrature.weights)
    log_pf = logsumexp(log_w + log_ndtr(-mm / m.sigma), axis=-1)
    log_sf = logsumexp(log_w + log_ndtr(mm / m.sigma), axis=-1)
    return np.where(log_pf < log_sf, ndtri_exp(np.minimum(log_pf, 0.0)), -ndtri_exp(np.minimum(log_sf, 0.0)))


def spce_conditional_quantile(m: SpceModel, d, alpha, max_iter: int = 200):
    """Invert the conditional CDF: bisection to 1e-3 sigma, then Newton steps."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie strictly inside (0, 1)")
    mm = np.atleast_2d(m.latent_map(d))
    w = m.quadrature.weights
    s = m.sigma
    lo = mm.min(axis=1) - 10 * s
    hi = mm.max(axis=1) + 10 * s

    def cdf(q):
        return np.sum(w * ndtr((q[:, None] - mm) / s), axis=1)

    def pdf(q):
        e = (q[:, None] - mm) / s
        return np.sum(w * np.exp(-0.5 * e * e), axis=1) / (s * np.sqrt(2 * np.pi))

    it = 0
    while np.any(hi - lo > 1e-3 * s) and it < max_iter:
        mid = 0.5 * (lo + hi)
        up = cdf(mid) < alpha
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
        it += 1
    q = 0.5 * (lo + hi)
    while it < max_iter:
        f = cdf(q) - alpha
        if np.all(np.abs(f) <= 1e-12):
            break
        dens = pdf(q)
        q = np.clip(q - f / np.maximum(dens, 1e-300), lo, hi)
        it += 1
    if np.any(np.abs(cdf(q) - alpha) > 1e-10):
        raise RuntimeError("SPCE quantile inversion did not converge")
    step = 1e-3 * s
    flat = (np.abs(cdf(q - step) - alpha) <= 1e-12) | (np.abs(cdf(q + step) - alpha) <= 1e-12)
    if np.any(flat):
        # sigma far below the node spacing: the cdf is numerically flat around the root,
        # so return the centre of the set where it is within 1e-12 of alpha
        lo0 = mm[flat].min(axis=1) - 10 * s
        hi0 = mm[flat].max(axis=1) + 10 * s
        q[flat] = _flat_root_centre(mm[flat], q[flat], lo0, hi0, alpha, w, s)
    return q if np.ndim(d) > 1 else float(q[0])


def _flat_root_centre(mm, q, lo, hi, alpha, w, s, tol=1e-12, n_iter=100):
    def f(x):
        return np.sum(w * ndtr((x[:, None] - mm) / s), axis=1)

    a, b = lo.copy(), q.copy()  # left end: first point with F >= alpha - tol
    for _ in range(n_iter):
        mid = 0.5 * (a + b)
        ok = f(mid) >= alpha - tol
        a, b = np.where(ok, a, mid), np.where(ok, mid, b)
    left = b
    a, b = q.copy(), hi.copy()  # right end: last point with F <= alpha + tol
    for _ in range(n_iter):
        mid = 0.5 * (a + b)
        ok = f(mid) <= alpha + tol
        a, b = np.where(ok, mid, a), np.where(ok, b, mid)
    return 0.5 * (left + a)


def spce_sample(m: SpceModel, d, n: int, rng: np.random.Generator) -> np.ndarray:
    if n == 0:
        return np.empty(0)
    d = np.asarray(d, dtype=float).reshape(1, -1)
    xi = rng.standard_normal(n)
    eps = rng.standard_normal(n) * m.sigma
    return m.evaluate(np.repeat(d, n, axis=0), xi) + eps
