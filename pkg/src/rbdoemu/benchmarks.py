"""Benchmark RBDO problems: column buckling, corroded beam under a stochastic load,
and a short column under oblique compression.

Units: buckling and short column in N and mm (stresses in MPa); the beam in
N and m (stresses in Pa, density as unit weight in N/m^3, time in months).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import ndtri

from .pce import DesignBox
from .prob import ProcessSpec, make_marginal
from .problem import DesignVariable, InputModel, RbdoProblem

log = logging.getLogger(__name__)


class _SpecMixin:
    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


# --- column buckling ---------------------------------------------------------

@dataclass(frozen=True)
class BucklingSpec(_SpecMixin):
    k_mean: float = 0.6
    k_cov: float = 0.10
    e_mean: float = 10_000.0
    e_cov: float = 0.05
    l_mean: float = 3_000.0
    l_cov: float = 0.01
    f_ser: float = 1.4622e6
    lower: tuple[float, float] = (150.0, 150.0)
    upper: tuple[float, float] = (350.0, 350.0)
    target_pf: float = 0.05


def _buckling_marginals(spec: BucklingSpec):
    return (make_marginal("lognormal", spec.k_mean, spec.k_cov),
            make_marginal("lognormal", spec.e_mean, spec.e_cov),
            make_marginal("lognormal", spec.l_mean, spec.l_cov))


class BucklingLimitState:
    """g = F_buck - F_ser on rows ``[b, h, k, E, L]``."""

    def __init__(self, f_ser: float):
        self.f_ser = f_ser

    def __call__(self, w):
        w = np.atleast_2d(w)
        b, h, k, e, length = w.T
        return k * np.pi**2 * e * b * h**3 / (12.0 * length**2) - self.f_ser


def buckling_problem(spec: BucklingSpec | None = None) -> RbdoProblem:
    spec = spec or BucklingSpec()
    k, e, length = _buckling_marginals(spec)
    inputs = InputModel(
        design=(DesignVariable("b"), DesignVariable("h")),
        env=(("k", k), ("E", e), ("L", length), ("F_ser", make_marginal("constant", spec.f_ser))),
    )
    return RbdoProblem(
        name="buckling",
        box=DesignBox(np.array(spec.lower), np.array(spec.upper)),
        cost=lambda d: float(d[0] * d[1]),
        inputs=inputs,
        limit_state=BucklingLimitState(spec.f_ser),
        target_pf=spec.target_pf,
        soft_constraints=(lambda d: float(d[1] - d[0]),),
        params={"id": "buckling", **spec.to_dict()},
    )


def buckling_zeta(spec: BucklingSpec | None = None) -> float:
    k, e, length = _buckling_marginals(spec or BucklingSpec())
    return float(np.sqrt(k.params[1] ** 2 + e.params[1] ** 2 + 4 * length.params[1] ** 2))


def buckling_exact_quantile(spec: BucklingSpec, d, alpha: float):
    """Closed-form alpha-quantile of g: F_buck is lognormal at fixed (b, h)."""
    k, e, length = _buckling_marginals(spec)
    d = np.asarray(d, dtype=float)
    b, h = d[..., 0], d[..., 1]
    lam = k.params[0] + e.params[0] - 2 * length.params[0] + np.log(np.pi**2 * b * h**3 / 12.0)
    return np.exp(lam + ndtri(alpha) * buckling_zeta(spec)) - spec.f_ser


def buckling_analytical_optimum(spec: BucklingSpec | None = None, target_pf: float | None = None):
    """Square section whose failure probability equals the target exactly.

    >>> round(buckling_analytical_optimum()[0], 2)
    238.45
    """
    spec = spec or BucklingSpec()
    p = spec.target_pf if target_pf is None else target_pf
    if not 0 < p < 1:
        raise ValueError("target failure probability must lie in (0, 1)")
    k, e, length = _buckling_marginals(spec)
    expo = 2 * length.params[0] - k.params[0] - e.params[0] - ndtri(p) * buckling_zeta(spec)
    b = float((12.0 * spec.f_ser / np.pi**2 * np.exp(expo)) ** 0.25)
    return b, b


# --- corroded beam -----------------------------------------------------------

@dataclass(frozen=True)
class CorrodedBeamSpec(_SpecMixin):
    fy_mean: float = 355e6  # Pa
    fy_cov: float = 0.03
    kappa_mean: float = 1e-3 / 12  # m/month
    kappa_cov: float = 0.10
    rho_mean: float = 78.5e3  # N/m^3
    rho_cov: float = 0.03
    load_mean: float = 12e3  # N
    load_cov: float = 0.25
    load_length: float = 1.0  # months
    horizon: float = 120.0
    n_time: int = 121
    n_kl: int = 100
    span: float = 5.0  # m
    lower: tuple[float, float] = (0.03, 0.03)
    upper: tuple[float, float] = (0.15, 0.15)
    target_pf: float = 0.05
    aggregation: str = "min"

    def __post_init__(self):
        if self.aggregation not in ("min", "max"):
            raise ValueError("aggregation must be 'min' or 'max'")
        if not 1 <= self.n_kl <= self.n_time:
            raise ValueError("need 1 <= n_kl <= n_time")

    def process(self) -> ProcessSpec:
        return ProcessSpec.monthly(self.load_mean, self.load_cov, self.load_length, self.horizon, self.n_time)


class BeamLimitState:
    """Plastic-hinge margin over time on rows ``[b0, h0, f_y, kappa, rho, theta...]``, aggregated in time."""

    def __init__(self, spec: CorrodedBeamSpec, inputs: InputModel):
        self.spec = spec
        self.times = np.asarray(spec.process().times)
        self.modes = inputs.kl.modes()  # (n_time, n_kl)
        self.n_corroded = 0

    def trajectories(self, w):
        w = np.atleast_2d(w)
        b, h, fy, kappa, rho = w[:, :5].T
        load = self.spec.load_mean + w[:, 5:] @ self.modes.T
        loss = 2.0 * kappa[:, None] * self.times[None, :]
        bt = b[:, None] - loss
        ht = h[:, None] - loss
        gone = (bt <= 0) | (ht <= 0)
        if np.any(gone):
            self.n_corroded += int(np.count_nonzero(np.any(gone, axis=1)))
        resist = np.where(gone, 0.0, np.maximum(bt, 0.0) * np.maximum(ht, 0.0) ** 2 * fy[:, None] / 4.0)
        span = self.spec.span
        demand = load * span / 4.0 + (rho * b * h * span**2 / 8.0)[:, None]
        return resist - demand

    def __call__(self, w):
        g = self.trajectories(w)
        return g.min(axis=1) if self.spec.aggregation == "min" else g.max(axis=1)


def corroded_beam_problem(spec: CorrodedBeamSpec | None = None, *, n_kl: int | None = None,
                          n_time: int | None = None, aggregation: str | None = None) -> RbdoProblem:
    spec = spec or CorrodedBeamSpec()
    overrides = {k: v for k, v in (("n_kl", n_kl), ("n_time", n_time), ("aggregation", aggregation)) if v is not None}
    if overrides:
        spec = CorrodedBeamSpec.from_dict({**spec.to_dict(), **overrides})
    inputs = InputModel(
        design=(DesignVariable("b0"), DesignVariable("h0")),
        env=(("f_y", make_marginal("lognormal", spec.fy_mean, spec.fy_cov)),
             ("kappa", make_marginal("gaussian", spec.kappa_mean, spec.kappa_cov)),
             ("rho", make_marginal("lognormal", spec.rho_mean, spec.rho_cov))),
        process=spec.process(),
        n_kl=spec.n_kl,
    )
    rho_bar, span = spec.rho_mean, spec.span
    return RbdoProblem(
        name="corroded-beam",
        box=DesignBox(np.array(spec.lower), np.array(spec.upper)),
        cost=lambda d: float(rho_bar * span * d[0] * d[1]),
        inputs=inputs,
        limit_state=BeamLimitState(spec, inputs),
        target_pf=spec.target_pf,
        soft_constraints=(lambda d: float(d[1] - d[0]),),
        params={"id": "corroded-beam", **spec.to_dict()},
    )


# --- short column ------------------------------------------------------------

@dataclass(frozen=True)
class ShortColumnSpec(_SpecMixin):
    x_cov: float = 0.01
    f_mean: float = 2.5e6  # N
    f_cov: float = 0.20
    m1_mean: float = 250e6  # N mm
    m1_cov: float = 0.30
    m2_mean: float = 125e6  # N mm
    m2_cov: float = 0.30
    sy_mean: float = 40.0  # MPa
    sy_cov: float = 0.10
    lower: tuple[float, float] = (200.0, 400.0)
    upper: tuple[float, float] = (700.0, 1000.0)
    target_pf: float = 0.0013
    aspect_ratio: tuple[float, float] | None = None  # optional bounds on b / h

    def __post_init__(self):
        if self.aspect_ratio is not None and not 0 < self.aspect_ratio[0] < self.aspect_ratio[1]:
            raise ValueError("aspect ratio bounds must satisfy 0 < low < high")


class ShortColumnLimitState:
    """Yield interaction on rows ``[b, h, F, M1, M2, sigma_y]``; non-positive sections count as failure."""

    def __init__(self):
        self.n_invalid = 0

    def __call__(self, w):
        w = np.atleast_2d(w)
        b, h, f, m1, m2, sy = w.T
        bad = (b <= 0) | (h <= 0)
        if np.any(bad):
            self.n_invalid += int(np.count_nonzero(bad))
            b = np.where(bad, 1.0, b)
            h = np.where(bad, 1.0, h)
        g = 1.0 - 4 * m1 / (b * h**2 * sy) - 4 * m2 / (b**2 * h * sy) - (f / (b * h * sy)) ** 2
        return np.where(bad, -np.inf, g)


def _aspect_constraints(bounds):
    if bounds is None:
        return ()
    low, high = bounds
    return (lambda d: float(low * d[1] - d[0]), lambda d: float(d[0] - high * d[1]))


def short_column_problem(spec: ShortColumnSpec | None = None) -> RbdoProblem:
    spec = spec or ShortColumnSpec()
    inputs = InputModel(
        design=(DesignVariable("b", "gaussian", spec.x_cov), DesignVariable("h", "gaussian", spec.x_cov)),
        env=(("F", make_marginal("lognormal", spec.f_mean, spec.f_cov)),
             ("M1", make_marginal("lognormal", spec.m1_mean, spec.m1_cov)),
             ("M2", make_marginal("lognormal", spec.m2_mean, spec.m2_cov)),
             ("sigma_y", make_marginal("lognormal", spec.sy_mean, spec.sy_cov))),
    )
    return RbdoProblem(
        name="short-column",
        box=DesignBox(np.array(spec.lower), np.array(spec.upper)),
        cost=lambda d: float(d[0] * d[1]),
        inputs=inputs,
        limit_state=ShortColumnLimitState(),
        target_pf=spec.target_pf,
        soft_constraints=_aspect_constraints(spec.aspect_ratio),
        params={"id": "short-column", **spec.to_dict()},
    )


SPECS = {"buckling": BucklingSpec, "corroded-beam": CorrodedBeamSpec, "short-column": ShortColumnSpec}
_BUILDERS = {"buckling": buckling_problem, "corroded-beam": corroded_beam_problem, "short-column": short_column_problem}


def make_problem(problem_id: str, overrides: dict | None = None) -> RbdoProblem:
    """Build a benchmark by id, with spec fields overridden from a plain dict."""
    if problem_id not in SPECS:
        raise ValueError(f"unknown problem id {problem_id!r}; choose from {sorted(SPECS)}")
    spec = SPECS[problem_id].from_dict({**SPECS[problem_id]().to_dict(), **(overrides or {})})
    return _BUILDERS[problem_id](spec)
