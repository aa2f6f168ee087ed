"""Emulator-based RBDO pipeline and the Monte Carlo double-loop reference.

Pipeline stages: I, experimental design; II, emulator fit; III, deterministic
optimization of the cost under the emulator's reliability constraint.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtri

from .glam import GlamConfig, GlamModel, fit_glam, glam_conditional_quantile
from .kriging import KrigingConfig, KrigingModel, fit_kriging, kriging_predict_mean, mc_quantile
from .prob import lhs_sample
from .problem import ExperimentalDesign, OptimizationResult, RbdoProblem
from .spce import (
    SpceConfig,
    SpceModel,
    fit_spce,
    spce_conditional_quantile,
    spce_failure_probability,
    spce_log_failure_probability,
    spce_probit_failure_probability,
)

log = logging.getLogger(__name__)

EMULATORS = ("glam", "spce", "kriging")
FORMULATIONS = ("quantile", "pf")
PF_TRANSFORMS = ("auto", "linear", "log", "probit")
_DEFAULT_FORMULATION = {"glam": "quantile", "spce": "pf", "kriging": "quantile"}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def generate_experimental_design(p: RbdoProblem, n_ed: int, seed: int) -> ExperimentalDesign:
    """One stochastic response per LHS design point; points whose limit state fails are dropped."""
    if n_ed < 1:
        raise ValueError("n_ed must be >= 1")
    rng = np.random.default_rng(seed)
    d = p.box.from_unit(2.0 * lhs_sample(n_ed, p.box.n_dims, rng) - 1.0)
    z = rng.standard_normal((n_ed, p.inputs.n_standard))
    w = p.inputs.realize(d, z)
    with np.errstate(all="ignore"):
        y = np.asarray(p.limit_state(w), dtype=float)
    ok = np.isfinite(y)
    dropped = int(np.count_nonzero(~ok))
    if dropped:
        log.warning("%d of %d experimental design points dropped (limit state failed)", dropped, n_ed)
    return ExperimentalDesign(d[ok], y[ok], seed, dropped, w[ok])


@dataclass(frozen=True)
class KrigingEmulator:
    """Augmented-space Kriging plus the Monte Carlo settings of its quantile estimate."""

    model: KrigingModel
    problem: RbdoProblem
    n_mc: int
    crn_seed: int

    def __call__(self, d):
        return mc_quantile(lambda w: kriging_predict_mean(self.model, w), d, self.problem.inputs,
                           self.n_mc, self.problem.alpha, self.crn_seed)


@dataclass(frozen=True)
class MonteCarloModel:
    """The original limit state under common random numbers (double-loop reference)."""

    problem: RbdoProblem
    n_mc: int
    crn_seed: int

    def __call__(self, d):
        return mc_quantile(self.problem.limit_state, d, self.problem.inputs, self.n_mc,
                           self.problem.alpha, self.crn_seed)


@dataclass(frozen=True)
class ConstraintMap:
    """Deterministic reliability constraint d -> value, feasible when <= 0.

    Quantile forms return ``-q_alpha(d) / scale``: failure is g <= 0, so the
    alpha-quantile of g must be non-negative. The pf form returns
    ``pf(d) - target``, ``log pf(d) - log target`` or
    ``Phi^-1(pf(d)) - Phi^-1(target)``; all three share one feasible set.
    """

    kind: str
    formulation: str
    fn: Callable[[np.ndarray], float]
    scale: float = 1.0
    transform: str = "linear"

    def __call__(self, d) -> float:
        return float(self.fn(np.asarray(d, dtype=float)))


def build_constraint(emulator, formulation: str, problem: RbdoProblem, scale: float = 1.0,
                     pf_transform: str = "auto") -> ConstraintMap:
    """Deterministic constraint map for a fitted emulator.

    ``pf_transform`` picks the monotone map applied to the SPCE failure
    probability; ``"auto"`` means linear, or log space for targets <= 0.01.
    """
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}")
    if pf_transform not in PF_TRANSFORMS:
        raise ValueError(f"unknown pf transform {pf_transform!r}")
    alpha = problem.alpha
    if isinstance(emulator, GlamModel):
        if formulation != "quantile":
            raise ValueError("GLaM supports the quantile formulation only")
        return ConstraintMap("glam", formulation,
                             lambda d: -float(glam_conditional_quantile(emulator, d, alpha)) / scale, scale)
    if isinstance(emulator, SpceModel):
        if formulation == "quantile":
            return ConstraintMap("spce", formulation,
                                 lambda d: -float(spce_conditional_quantile(emulator, d, alpha)) / scale, scale)
        if pf_transform == "auto":
            pf_transform = "log" if alpha <= 0.01 else "linear"
        if pf_transform == "log":
            log_target = math.log(alpha)
            return ConstraintMap("spce", formulation,
                                 lambda d: float(spce_log_failure_probability(emulator, d)) - log_target,
                                 transform="log")
        if pf_transform == "probit":
            z_target = float(ndtri(alpha))
            return ConstraintMap("spce", formulation,
                                 lambda d: float(spce_probit_failure_probability(emulator, d)) - z_target,
                                 transform="probit")
        return ConstraintMap("spce", formulation, lambda d: float(spce_failure_probability(emulator, d)) - alpha)
    if isinstance(emulator, (KrigingEmulator, MonteCarloModel)):
        if formulation != "quantile":
            raise ValueError("Monte Carlo constraints support the quantile formulation only")
        kind = "kriging" if isinstance(emulator, KrigingEmulator) else "reference"
        return ConstraintMap(kind, formulation, lambda d: -emulator(d) / scale, scale)
    raise TypeError(f"unsupported emulator type {type(emulator).__name__}")


@dataclass(frozen=True)
class OptimizerOptions:
    max_iter: int = 500
    ftol: float = 1e-8
    feas_tol: float = 1e-6
    fd_step: float = 1e-6  # relative to the box width


class _Problem:
    """Normalized-coordinate view of the optimization problem with memoized finite differences."""

    def __init__(self, p: RbdoProblem, constraint: ConstraintMap | None, options: OptimizerOptions, d0):
        self.p = p
        self.box = p.box
        self.h = options.fd_step
        self.cost_scale = abs(p.cost(d0)) or 1.0
        self.soft_scale = float(np.mean(p.box.width))
        self.funcs = [lambda d, f=f: f(d) / self.soft_scale for f in p.soft_constraints]
        if constraint is not None:
            self.funcs.append(constraint)
        self.n_cost = 0
        self.n_con = 0
        self._con_cache: dict[bytes, np.ndarray] = {}

    def d(self, x):
        return self.box.from_unit(2.0 * np.clip(x, 0.0, 1.0) - 1.0)

    def cost(self, x):
        self.n_cost += 1
        return self.p.cost(self.d(x)) / self.cost_scale

    def cons(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self._con_cache:
            self.n_con += 1
            d = self.d(x)
            self._con_cache[key] = np.array([f(d) for f in self.funcs])
            if len(self._con_cache) > 256:
                self._con_cache.pop(next(iter(self._con_cache)))
        return self._con_cache[key]

    def _steps(self, x):
        # forward steps, backward at the upper bound
        return [(-self.h if x[i] + self.h > 1.0 else self.h) for i in range(x.size)]

    def cost_grad(self, x):
        # the cost is cheap and exact: second-order stencils remove the h/2 bias of the minimizer
        g = np.empty(x.size)
        h = self.h
        for i in range(x.size):
            def at(offset):
                xi = x.copy()
                xi[i] += offset
                return self.cost(xi)

            if x[i] - h < 0.0:
                g[i] = (-3.0 * at(0.0) + 4.0 * at(h) - at(2 * h)) / (2 * h)
            elif x[i] + h > 1.0:
                g[i] = (3.0 * at(0.0) - 4.0 * at(-h) + at(-2 * h)) / (2 * h)
            else:
                g[i] = (at(h) - at(-h)) / (2 * h)
        return g

    def cons_jac(self, x):
        c0 = self.cons(x)
        jac = np.empty((c0.size, x.size))
        for i, s in enumerate(self._steps(x)):
            xi = x.copy()
            xi[i] += s
            jac[:, i] = (self.cons(xi) - c0) / s
        return jac

    def violation(self, x) -> float:
        c = self.cons(x)
        return float(np.max(c)) if c.size else -np.inf


def _restore(prob: _Problem, x0, options: OptimizerOptions):
    """Drive the design into the feasible set by minimizing the squared constraint violation."""

    def penalty(x):
        v = np.maximum(prob.cons(x), 0.0)
        return float(v @ v)

    def grad(x):
        v = np.maximum(prob.cons(x), 0.0)
        return 2.0 * v @ prob.cons_jac(x)

    res = minimize(penalty, x0, jac=grad, method="SLSQP", bounds=[(0.0, 1.0)] * x0.size,
                   options={"maxiter": options.max_iter, "ftol": 1e-14})
    return np.clip(res.x, 0.0, 1.0)


def optimize(p: RbdoProblem, constraint: ConstraintMap | None, d0=None,
             options: OptimizerOptions | None = None) -> OptimizationResult:
    """SQP (SLSQP, BFGS Hessian) in box-normalized coordinates with forward-difference gradients."""
    options = options or OptimizerOptions()
    d0 = p.box.check(p.start if d0 is None else d0)
    prob = _Problem(p, constraint, options, d0)
    x0 = 0.5 * (p.box.to_unit(d0) + 1.0)
    message = ""
    if prob.funcs and prob.violation(x0) > options.feas_tol:
        x0 = _restore(prob, x0, options)
        message = "feasibility restoration applied; "

    trace = []

    def record(x):
        c = prob.cons(x)
        trace.append({"d": prob.d(x).tolist(), "cost": p.cost(prob.d(x)),
                      "constraints": c.tolist(), "step": float(np.linalg.norm(x - last[0]))})
        last[0] = x.copy()

    last = [x0.copy()]
    cons = [{"type": "ineq", "fun": lambda x: -prob.cons(x), "jac": lambda x: -prob.cons_jac(x)}] if prob.funcs else []
    res = minimize(prob.cost, x0, jac=prob.cost_grad, method="SLSQP", bounds=[(0.0, 1.0)] * x0.size,
                   constraints=cons, callback=record,
                   options={"maxiter": options.max_iter, "ftol": options.ftol})
    x = np.clip(res.x, 0.0, 1.0)
    viol = prob.violation(x) if prob.funcs else -np.inf
    converged = bool(res.success) and viol <= options.feas_tol
    message += str(res.message)
    if not converged:
        feasible = [t for t in trace if not t["constraints"] or max(t["constraints"]) <= options.feas_tol]
        if viol > options.feas_tol and feasible:
            best = min(feasible, key=lambda t: t["cost"])
            x = 0.5 * (p.box.to_unit(np.array(best["d"])) + 1.0)
            message += "; returning best feasible iterate"
    d_star = prob.d(x)
    raw = np.array([f(d_star) for f in p.soft_constraints] + ([constraint(d_star)] if constraint else []))
    return OptimizationResult(d_star, p.cost(d_star), raw, trace, converged, prob.n_cost, prob.n_con, message)


@dataclass(frozen=True)
class RbdoOptions:
    formulation: str | None = None
    pf_transform: str = "probit"
    glam: GlamConfig = field(default_factory=GlamConfig)
    spce: SpceConfig = field(default_factory=SpceConfig)
    kriging: KrigingConfig = field(default_factory=KrigingConfig)
    n_mc: int = 100_000
    crn_seed: int = 12345
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    d0: tuple[float, ...] | None = None


@dataclass
class RbdoRun:
    result: OptimizationResult
    model: object
    design: ExperimentalDesign
    constraint: ConstraintMap
    timings: dict[str, float]


def _fit(p: RbdoProblem, kind: str, ed: ExperimentalDesign, options: RbdoOptions):
    if kind == "glam":
        return fit_glam(ed.design_points, ed.responses, p.box, options.glam)
    if kind == "spce":
        return fit_spce(ed.design_points, ed.responses, p.box, options.spce)
    model = fit_kriging(ed.augmented, ed.responses, options.kriging)
    return KrigingEmulator(model, p, options.n_mc, options.crn_seed)


def solve_rbdo(p: RbdoProblem, emulator_kind: str, n_ed: int, seed: int,
               options: RbdoOptions | None = None) -> RbdoRun:
    """Stages I-III; timings are reported per stage in seconds."""
    if emulator_kind not in EMULATORS:
        raise ValueError(f"unknown emulator {emulator_kind!r}; choose from {EMULATORS}")
    options = options or RbdoOptions()
    formulation = options.formulation or _DEFAULT_FORMULATION[emulator_kind]
    timings = {}
    stage = "experimental-design"
    try:
        t = time.perf_counter()
        ed = generate_experimental_design(p, n_ed, seed)
        timings["ed_seconds"] = time.perf_counter() - t
        stage = "fit"
        t = time.perf_counter()
        model = _fit(p, emulator_kind, ed, options)
        timings["fit_seconds"] = time.perf_counter() - t
        stage = "optimize"
        t = time.perf_counter()
        scale = float(np.std(ed.responses)) or 1.0
        constraint = build_constraint(model, formulation, p, scale, options.pf_transform)
        result = optimize(p, constraint, options.d0, options.optimizer)
        timings["opt_seconds"] = time.perf_counter() - t
    except Exception as exc:  # noqa: BLE001 - relabelled with the stage
        raise StageError(stage, exc) from exc
    return RbdoRun(result, model, ed, constraint, timings)


def reference_double_loop(p: RbdoProblem, n_mc: int, seed: int,
                          options: RbdoOptions | None = None) -> OptimizationResult:
    """Quantile-form RBDO on the original limit state with common random numbers."""
    if n_mc * p.target_pf < 50:
        raise ValueError("n_mc * target_pf must be at least 50 for a usable quantile estimate")
    options = options or RbdoOptions()
    mc = MonteCarloModel(p, n_mc, seed)
    # scale by the spread of g at the start design
    w = np.concatenate(list(p.inputs.crn_inputs(p.start, min(n_mc, 10_000), seed)))
    scale = float(np.std(p.limit_state(w))) or 1.0
    return optimize(p, build_constraint(mc, "quantile", p, scale), options.d0, options.optimizer)


def relative_cost_error(result, reference) -> float:
    """|c(d*) - c(d_ref)| / c(d_ref); both arguments are costs or objects with a ``cost``."""
    c = getattr(result, "cost", result)
    c_ref = getattr(reference, "cost", reference)
    if c_ref == 0:
        raise ValueError("reference cost must be non-zero")
    return abs(c - c_ref) / abs(c_ref)
