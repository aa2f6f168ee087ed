"""Orthonormal polynomial bases, hyperbolic truncation sets and Gauss rules."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

KINDS = ("hermite", "legendre")


@dataclass(frozen=True)
class MultiIndexSet:
    n_dims: int
    indices: np.ndarray  # (n_terms, n_dims) int
    max_degree: int
    q_norm: float

    def __len__(self) -> int:
        return len(self.indices)

    def key(self) -> tuple:
        return tuple(map(tuple, self.indices.tolist()))

    def position(self) -> dict[tuple, int]:
        return {tuple(b): i for i, b in enumerate(self.indices.tolist())}

    def to_dict(self) -> dict:
        return {"n_dims": self.n_dims, "max_degree": self.max_degree, "q_norm": self.q_norm,
                "indices": self.indices.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> MultiIndexSet:
        idx = np.asarray(data["indices"], dtype=int).reshape(-1, data["n_dims"])
        return cls(data["n_dims"], idx, data["max_degree"], data["q_norm"])


def q_norm_of(indices, q: float) -> np.ndarray:
    b = np.asarray(indices, dtype=float)
    return np.sum(b**q, axis=-1) ** (1.0 / q)


def build_truncation(n_dims: int, max_degree: int, q_norm: float = 1.0) -> MultiIndexSet:
    """All multi-indices whose q-norm does not exceed ``max_degree``.

    Indices are ordered by total degree, then with the earlier dimensions
    carrying the higher powers (``00, 10, 01, 20, 11, 02``).
    """
    if max_degree < 0 or not 0 < q_norm <= 1:
        raise ValueError("need max_degree >= 0 and 0 < q_norm <= 1")
    kept = []
    # the q-norm dominates the 1-norm for q <= 1, so the total-degree set is a superset
    for beta in itertools.product(range(max_degree + 1), repeat=n_dims):
        if sum(beta) > max_degree:
            continue
        if q_norm_of(beta, q_norm) <= max_degree + 1e-12:
            kept.append(beta)
    kept.sort(key=lambda b: (sum(b), tuple(-x for x in b)))
    return MultiIndexSet(n_dims, np.array(kept, dtype=int).reshape(-1, n_dims), max_degree, q_norm)


def univariate(kind: str, x, degree: int) -> np.ndarray:
    """Orthonormal polynomials of degree 0..degree at ``x``; shape ``x.shape + (degree+1,)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree == 0:
        return out
    if kind == "hermite":
        out[..., 1] = x
        for n in range(1, degree):
            out[..., n + 1] = (x * out[..., n] - np.sqrt(n) * out[..., n - 1]) / np.sqrt(n + 1)
    elif kind == "legendre":
        # P_n scaled by sqrt(2n+1): orthonormal for the uniform law on [-1, 1]
        out[..., 1] = np.sqrt(3.0) * x
        for n in range(1, degree):
            a = np.sqrt((2 * n + 1) * (2 * n + 3)) / (n + 1)
            b = n / (n + 1) * np.sqrt((2 * n + 3) / (2 * n - 1))
            out[..., n + 1] = a * x * out[..., n] - b * out[..., n - 1]
    else:
        raise ValueError(f"unknown polynomial kind {kind!r}")
    return out


def eval_basis(mset: MultiIndexSet, kinds, points) -> np.ndarray:
    """Evaluate every basis function at every point.

    ``points`` has shape ``(..., n_dims)``; the result has shape ``(..., n_terms)``.
    """
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != mset.n_dims:
        raise ValueError(f"points have {points.shape[-1]} dims, basis has {mset.n_dims}")
    if isinstance(kinds, str):
        kinds = [kinds] * mset.n_dims
    if len(kinds) != mset.n_dims:
        raise ValueError("one polynomial kind per dimension required")
    psi = np.ones(points.shape[:-1] + (len(mset),))
    for i, kind in enumerate(kinds):
        deg = mset.indices[:, i]
        top = int(deg.max()) if len(deg) else 0
        if top == 0:
            continue
        table = univariate(kind, points[..., i], top)
        psi *= table[..., deg]
    return psi


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def size(self) -> int:
        return self.nodes.size


def gauss_quadrature(kind: str, n_points: int) -> QuadratureRule:
    """Golub-Welsch rule for the standard normal ("hermite") or uniform(-1, 1) ("legendre") law.

    Weights are normalized to sum to one.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    k = np.arange(1, n_points, dtype=float)
    if kind == "hermite":
        off = np.sqrt(k)
    elif kind == "legendre":
        off = k / np.sqrt(4 * k * k - 1)
    else:
        raise ValueError(f"unknown polynomial kind {kind!r}")
    if n_points == 1:
        nodes = np.zeros(1)
    else:
        nodes = eigh_tridiagonal(np.zeros(n_points), off, eigvals_only=True)
        nodes = 0.5 * (nodes - nodes[::-1])  # enforce exact symmetry
    # Christoffel weights: relative accuracy is better than squared eigenvector entries
    log_w = -_log_christoffel_sum(kind, nodes, n_points - 1)
    weights = np.exp(log_w - log_w.max())
    weights /= weights.sum()
    return QuadratureRule(nodes, weights, kind)


def _log_christoffel_sum(kind: str, x: np.ndarray, degree: int) -> np.ndarray:
    """log of sum_{k<=degree} phi_k(x)**2, rescaled as it goes so large rules do not overflow."""
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    total = np.ones_like(x)
    log_scale = np.zeros_like(x)  # all three running values are stored divided by exp(log_scale)
    for n in range(degree):
        if kind == "hermite":
            nxt = (x * cur - np.sqrt(n) * prev) / np.sqrt(n + 1)
        elif n == 0:
            nxt = np.sqrt(3.0) * x
        else:
            a = np.sqrt((2 * n + 1) * (2 * n + 3)) / (n + 1)
            b = n / (n + 1) * np.sqrt((2 * n + 3) / (2 * n - 1))
            nxt = a * x * cur - b * prev
        prev, cur = cur, nxt
        total = total + cur * cur
        big = np.abs(cur) > 1e100
        if np.any(big):
            f = np.where(big, 1e-100, 1.0)
            prev, cur, total = prev * f, cur * f, total * f * f
            log_scale = log_scale + np.where(big, np.log(1e100), 0.0)
    return np.log(total) + 2.0 * log_scale


@dataclass(frozen=True)
class DesignBox:
    """Axis-aligned design domain, mapped affinely onto [-1, 1]^n."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or not np.all(np.isfinite(lo) & np.isfinite(hi)) or np.any(lo >= hi):
            raise ValueError("design bounds must be finite with lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n_dims(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, d, rtol: float = 1e-9) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        slack = rtol * self.width
        return np.all((d >= self.lower - slack) & (d <= self.upper + slack), axis=-1)

    def check(self, d) -> np.ndarray:
        d = np.atleast_1d(np.asarray(d, dtype=float))
        if d.shape[-1] != self.n_dims:
            raise ValueError(f"design has {d.shape[-1]} components, domain has {self.n_dims}")
        if not np.all(self.contains(d)):
            raise ValueError("design outside the design domain; extrapolation is not supported")
        return d

    def to_unit(self, d) -> np.ndarray:
        return 2.0 * (np.asarray(d, dtype=float) - self.lower) / self.width - 1.0

    def from_unit(self, x) -> np.ndarray:
        return self.lower + 0.5 * (np.asarray(x, dtype=float) + 1.0) * self.width

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> DesignBox:
        return cls(np.asarray(data["lower"]), np.asarray(data["upper"]))


def ols_loo(psi: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares coefficients and the relative leave-one-out error."""
    n, p = psi.shape
    if p >= n:
        return np.zeros(p), np.inf
    q, r = np.linalg.qr(psi)
    if np.min(np.abs(np.diag(r))) < 1e-10 * np.max(np.abs(np.diag(r))):
        return np.zeros(p), np.inf
    coef = np.linalg.solve(r, q.T @ y)
    h = np.sum(q * q, axis=1)
    res = (y - psi @ coef) / np.maximum(1.0 - h, 1e-12)
    var = np.var(y)
    return coef, float(np.mean(res**2) / var) if var > 0 else 0.0


def select_trend(x_unit: np.ndarray, y: np.ndarray, kinds, degrees, q_norms, early_stop: int = 2):
    """Pick the truncation minimizing the leave-one-out error of a least-squares PCE.

    The degree loop stops after ``early_stop`` consecutive non-improving degrees.
    Returns ``(mset, coef, loo)``.
    """
    n_dims = x_unit.shape[1]
    best = None
    seen = set()
    stall = 0
    for deg in degrees:
        improved = False
        for q in q_norms:
            mset = build_truncation(n_dims, deg, q)
            if mset.key() in seen:
                continue
            seen.add(mset.key())
            coef, loo = ols_loo(eval_basis(mset, kinds, x_unit), y)
            if best is None or loo < best[2] * (1 - 1e-10):
                best = (mset, coef, loo)
                improved = True
        stall = 0 if improved else stall + 1
        if stall >= early_stop:
            break
    return best
