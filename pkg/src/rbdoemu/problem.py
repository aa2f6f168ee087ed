"""RBDO problem description: design box, cost, soft constraints, input model and limit state.

The limit state works on *augmented* input rows ``[x, z_random, theta]``:
realized design-variable values, the random environmental variables, and the
KL coefficients of the load process when there is one. Failure means g <= 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .pce import DesignBox
from .prob import KlBasis, Marginal, ProcessSpec, kl_expand, make_marginal

_CACHE_LIMIT = 20_000_000  # floats kept per cached CRN block set
_crn_cache: dict[tuple, list[np.ndarray]] = {}


@dataclass(frozen=True)
class DesignVariable:
    """Random variable X_i | d centred on the design value d_i.

    ``family="deterministic"`` means X_i = d_i.
    """

    name: str
    family: str = "deterministic"
    cov: float = 0.0

    @property
    def is_random(self) -> bool:
        return self.family != "deterministic"

    def from_standard_normal(self, d_i, z):
        if not self.is_random:
            return np.broadcast_to(d_i, np.shape(z)).astype(float)
        d_i = np.asarray(d_i, dtype=float)
        if self.family == "gaussian":
            return d_i * (1.0 + self.cov * z)
        # other families are rebuilt per design value
        return np.vectorize(lambda m, zz: make_marginal(self.family, m, self.cov).from_standard_normal(zz))(d_i, z)


@dataclass(frozen=True)
class InputModel:
    design: tuple[DesignVariable, ...]
    env: tuple[tuple[str, Marginal], ...] = ()
    process: ProcessSpec | None = None
    n_kl: int = 0

    def __post_init__(self):
        if (self.process is None) != (self.n_kl == 0):
            raise ValueError("a load process needs n_kl >= 1, and n_kl needs a process")

    @property
    def random_env(self) -> tuple[tuple[str, Marginal], ...]:
        return tuple((n, m) for n, m in self.env if m.is_random)

    @property
    def constants(self) -> dict[str, float]:
        return {n: m.mean for n, m in self.env if not m.is_random}

    @property
    def columns(self) -> tuple[str, ...]:
        names = [v.name for v in self.design] + [n for n, _ in self.random_env]
        return tuple(names + [f"theta_{k + 1}" for k in range(self.n_kl)])

    @property
    def n_standard(self) -> int:
        """Standard normal variates consumed per realization."""
        return sum(v.is_random for v in self.design) + len(self.random_env) + self.n_kl

    @cached_property
    def kl(self) -> KlBasis | None:
        return kl_expand(self.process, self.n_kl) if self.process is not None else None

    def realize(self, d, z) -> np.ndarray:
        """Augmented inputs from designs ``d`` (one row or one per draw) and standard normals ``z``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        n = z.shape[0]
        if z.shape[1] != self.n_standard:
            raise ValueError(f"expected {self.n_standard} standard normal columns, got {z.shape[1]}")
        d = np.broadcast_to(np.asarray(d, dtype=float), (n, len(self.design)))
        out = np.empty((n, len(self.columns)))
        j = 0
        for i, var in enumerate(self.design):
            if var.is_random:
                out[:, i] = var.from_standard_normal(d[:, i], z[:, j])
                j += 1
            else:
                out[:, i] = d[:, i]
        col = len(self.design)
        for _, m in self.random_env:
            out[:, col] = m.from_standard_normal(z[:, j])
            col += 1
            j += 1
        out[:, col:] = z[:, j:]
        return out

    def chunk_rows(self) -> int:
        return max(1000, 2_000_000 // max(self.n_standard, 1))

    def crn_blocks(self, n: int, seed: int) -> list[np.ndarray]:
        """Standard normal blocks for ``n`` draws; identical for every design (common random numbers).

        Block ``i`` comes from its own substream ``(seed, i)``.
        """
        rows = self.chunk_rows()
        key = (int(seed), int(n), self.n_standard, rows)
        if key in _crn_cache:
            return _crn_cache[key]
        blocks = []
        for i, start in enumerate(range(0, n, rows)):
            size = min(rows, n - start)
            b = np.random.default_rng([int(seed), i]).standard_normal((size, self.n_standard))
            b.flags.writeable = False
            blocks.append(b)
        if n * self.n_standard <= _CACHE_LIMIT:
            if len(_crn_cache) > 8:
                _crn_cache.pop(next(iter(_crn_cache)))
            _crn_cache[key] = blocks
        return blocks

    def crn_inputs(self, d, n: int, seed: int):
        """Augmented input blocks at design ``d`` under common random numbers."""
        for block in self.crn_blocks(n, seed):
            yield self.realize(d, block)

    def to_dict(self) -> dict:
        return {
            "design": [{"name": v.name, "family": v.family, "cov": v.cov} for v in self.design],
            "env": [{"name": n, **m.to_dict()} for n, m in self.env],
            "process": None if self.process is None else self.process.to_dict(),
            "n_kl": self.n_kl,
        }


@dataclass(frozen=True)
class RbdoProblem:
    name: str
    box: DesignBox
    cost: Callable[[np.ndarray], float]
    inputs: InputModel
    limit_state: Callable[[np.ndarray], np.ndarray]
    target_pf: float
    soft_constraints: tuple[Callable[[np.ndarray], float], ...] = ()
    d0: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.target_pf < 1:
            raise ValueError("target failure probability must lie in (0, 1)")
        if len(self.inputs.design) != self.box.n_dims:
            raise ValueError("one design variable per box dimension required")

    @property
    def alpha(self) -> float:
        return self.target_pf

    @property
    def start(self) -> np.ndarray:
        return self.box.center if self.d0 is None else np.asarray(self.d0, dtype=float)

    def evaluate(self, d, z) -> np.ndarray:
        return self.limit_state(self.inputs.realize(d, z))


@dataclass(frozen=True)
class ExperimentalDesign:
    design_points: np.ndarray
    responses: np.ndarray
    seed: int
    n_dropped: int = 0
    augmented: np.ndarray | None = None  # raw draws, kept for the augmented-space baseline
    generator: str = "lhs-v1"

    @property
    def size(self) -> int:
        return self.responses.size

    def to_dict(self) -> dict:
        return {"design_points": self.design_points.tolist(), "responses": self.responses.tolist(),
                "seed": self.seed, "n_dropped": self.n_dropped, "generator": self.generator}


@dataclass
class OptimizationResult:
    d_star: np.ndarray
    cost: float
    constraints: np.ndarray  # raw values, feasible when <= 0
    trace: list[dict]
    converged: bool
    n_cost_evals: int
    n_constraint_evals: int
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "d_star": self.d_star.tolist(),
            "cost": self.cost,
            "constraints": self.constraints.tolist(),
            "converged": self.converged,
            "n_cost_evals": self.n_cost_evals,
            "n_constraint_evals": self.n_constraint_evals,
            "trace_length": len(self.trace),
            "message": self.message,
        }
