"""Marginal distributions, Latin hypercube sampling and Karhunen-Loeve
discretization of stationary Gaussian load processes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

FAMILIES = ("gaussian", "lognormal", "uniform", "constant")


@dataclass(frozen=True)
class Marginal:
    """Univariate input distribution described by its first two moments.

    ``params`` holds the native parameters: ``(mean, std)`` for gaussian,
    ``(lambda, zeta)`` for lognormal, ``(lower, upper)`` for uniform and
    ``(value,)`` for constant.
    """

    family: str
    mean: float
    std: float
    params: tuple[float, ...] = field(default=())

    @property
    def cov(self) -> float:
        return self.std / abs(self.mean) if self.mean != 0 else float("inf")

    @property
    def is_random(self) -> bool:
        return self.family != "constant"

    def ppf(self, u):
        """Inverse CDF, vectorized over ``u`` in (0, 1)."""
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise ValueError("u must lie strictly inside (0, 1)")
        if self.family == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * u
        return self.from_standard_normal(ndtri(u))

    def from_standard_normal(self, z):
        """Map standard normal variates through the isoprobabilistic transform."""
        z = np.asarray(z, dtype=float)
        if self.family == "gaussian":
            mu, sd = self.params
            return mu + sd * z
        if self.family == "lognormal":
            lam, zeta = self.params
            return np.exp(lam + zeta * z)
        if self.family == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * ndtr(z)
        return np.full_like(z, self.params[0])

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            mu, sd = self.params
            return ndtr((x - mu) / sd)
        if self.family == "lognormal":
            lam, zeta = self.params
            with np.errstate(divide="ignore"):
                return np.where(x > 0, ndtr((np.log(np.maximum(x, 1e-300)) - lam) / zeta), 0.0)
        if self.family == "uniform":
            lo, hi = self.params
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        return (x >= self.params[0]).astype(float)

    def to_dict(self) -> dict:
        return {"family": self.family, "mean": self.mean, "std": self.std}


def make_marginal(family: str, mean: float, cov: float | None = None, *, std: float | None = None) -> Marginal:
    """Build a marginal from its mean and either a coefficient of variation or a standard deviation.

    >>> m = make_marginal("lognormal", 0.6, 0.10)
    >>> round(m.params[1], 7), round(m.params[0], 6)
    (0.0997513, -0.515801)
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if not np.isfinite(mean):
        raise ValueError("mean must be finite")
    if family == "constant":
        return Marginal("constant", float(mean), 0.0, (float(mean),))
    if (cov is None) == (std is None):
        raise ValueError("give exactly one of cov or std")
    if std is None:
        if not cov > 0:
            raise ValueError(f"invalid dispersion: cov={cov}")
        std = cov * abs(mean)
    if not std > 0:
        raise ValueError(f"invalid dispersion: std={std}")
    mean, std = float(mean), float(std)
    if family == "gaussian":
        return Marginal(family, mean, std, (mean, std))
    if family == "uniform":
        half = np.sqrt(3.0) * std
        return Marginal(family, mean, std, (mean - half, mean + half))
    if mean <= 0:
        raise ValueError("lognormal marginal requires a positive mean")
    delta = std / mean
    zeta = float(np.sqrt(np.log1p(delta * delta)))
    lam = float(np.log(mean) - 0.5 * zeta * zeta)
    return Marginal(family, mean, std, (lam, zeta))


def marginal_from_dict(data: dict) -> Marginal:
    if data["family"] == "constant":
        return make_marginal("constant", data["mean"])
    return make_marginal(data["family"], data["mean"], std=data["std"])


def transform_u_to_physical(u, m: Marginal):
    """Inverse-CDF transform of uniform variates; strictly increasing in ``u``."""
    return m.ppf(u)


def lhs_sample(n_points: int, n_dims: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube sample in (0, 1)^n_dims with jittered strata.

    Every column has exactly one point in each interval ((i-1)/n, i/n).
    """
    if n_points < 1 or n_dims < 1:
        raise ValueError("n_points and n_dims must be >= 1")
    jitter = rng.random((n_points, n_dims))
    # keep points off the stratum edges so the open-interval property holds
    jitter = np.clip(jitter, 1e-12, 1.0 - 1e-12)
    strata = np.column_stack([rng.permutation(n_points) for _ in range(n_dims)])
    return (strata + jitter) / n_points


@dataclass(frozen=True)
class ProcessSpec:
    """Stationary Gaussian process with a squared-exponential autocorrelation.

    The correlation between two times is ``exp(-(t - s)**2 / (2 * length**2))``.
    """

    mean: float
    cov: float
    length: float
    times: tuple[float, ...]
    family: str = "gaussian"

    def __post_init__(self):
        if self.family != "gaussian":
            raise ValueError("only the gaussian autocorrelation family is supported")
        if not self.length > 0:
            raise ValueError("correlation length must be positive")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def std(self) -> float:
        return abs(self.mean) * self.cov

    def covariance(self) -> np.ndarray:
        t = np.asarray(self.times)
        lag = t[:, None] - t[None, :]
        return self.std**2 * np.exp(-0.5 * (lag / self.length) ** 2)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "cov": self.cov, "length": self.length, "times": list(self.times)}

    @classmethod
    def monthly(cls, mean: float, cov: float, length: float, horizon: float = 120.0, n_time: int = 121):
        return cls(mean, cov, length, tuple(np.linspace(0.0, horizon, n_time)))


@dataclass(frozen=True)
class KlBasis:
    eigenvalues: np.ndarray  # retained, descending
    eigenvectors: np.ndarray  # grid points x modes, orthonormal under the quadrature weights
    n_modes: int
    captured_variance: float
    all_eigenvalues: np.ndarray

    def modes(self) -> np.ndarray:
        """Scaled modes sqrt(eig_k) * vec_k as a (grid, modes) matrix."""
        return self.eigenvectors * np.sqrt(self.eigenvalues)[None, :]


def _trapezoid_weights(t: np.ndarray) -> np.ndarray:
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def kl_expand(spec: ProcessSpec, n_modes: int) -> KlBasis:
    """Nystrom Karhunen-Loeve decomposition on the process time grid."""
    t = np.asarray(spec.times, dtype=float)
    if not 1 <= n_modes <= t.size:
        raise ValueError(f"n_modes must be in [1, {t.size}]")
    cov = spec.covariance()
    if not np.all(np.isfinite(cov)):
        raise np.linalg.LinAlgError("non-finite covariance entries")
    sw = np.sqrt(_trapezoid_weights(t))
    vals, vecs = np.linalg.eigh(sw[:, None] * cov * sw[None, :])
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order] / sw[:, None]
    total = vals.sum()
    kept = vals[:n_modes]
    return KlBasis(kept, vecs[:, :n_modes], n_modes, float(kept.sum() / total), vals)


def sample_process(basis: KlBasis, theta, mean: float) -> np.ndarray:
    """Trajectories on the grid for one (``theta`` 1-D) or many (rows) KL coefficient vectors."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != basis.n_modes:
        raise ValueError(f"theta has {theta.shape[-1]} entries, basis has {basis.n_modes} modes")
    return mean + theta @ basis.modes().T
