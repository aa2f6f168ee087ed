"""Reliability-based design optimization with stochastic emulators.

The deterministic limit state and its input uncertainty are treated as one
stochastic simulator of the design variables. A generalized lambda model
(GLaM) or a stochastic polynomial chaos expansion (SPCE) emulates its
conditional response distribution, which turns the reliability constraint
into a smooth deterministic function of the design. A Kriging double loop and
a Monte Carlo double loop on the original model serve as baselines.
"""
from .benchmarks import (
    buckling_analytical_optimum,
    buckling_problem,
    corroded_beam_problem,
    make_problem,
    short_column_problem,
)
from .engine import (
    OptimizerOptions,
    RbdoOptions,
    build_constraint,
    generate_experimental_design,
    optimize,
    reference_double_loop,
    relative_cost_error,
    solve_rbdo,
)
from .gld import GldParams
from .glam import GlamConfig, GlamModel, fit_glam, glam_conditional_quantile
from .kriging import KrigingConfig, KrigingModel, fit_kriging, mc_quantile
from .pce import DesignBox, MultiIndexSet
from .problem import ExperimentalDesign, OptimizationResult, RbdoProblem
from .spce import SpceConfig, SpceModel, fit_spce, spce_conditional_quantile, spce_failure_probability

__version__ = "0.1.0"

__all__ = [
    "DesignBox",
    "ExperimentalDesign",
    "GldParams",
    "GlamConfig",
    "GlamModel",
    "KrigingConfig",
    "KrigingModel",
    "MultiIndexSet",
    "OptimizationResult",
    "OptimizerOptions",
    "RbdoOptions",
    "RbdoProblem",
    "SpceConfig",
    "SpceModel",
    "buckling_analytical_optimum",
    "buckling_problem",
    "build_constraint",
    "corroded_beam_problem",
    "fit_glam",
    "fit_kriging",
    "fit_spce",
    "generate_experimental_design",
    "glam_conditional_quantile",
    "make_problem",
    "mc_quantile",
    "optimize",
    "reference_double_loop",
    "relative_cost_error",
    "short_column_problem",
    "solve_rbdo",
    "spce_conditional_quantile",
    "spce_failure_probability",
]
