"""Generalized lambda distribution in the FKML parameterization.

The scalar API takes :class:`GldParams`; the underscore-free vectorized
helpers (``quantile``, ``quantile_density``, ``cdf``, ``logpdf``) accept the four
parameters as broadcastable arrays, which is what the GLaM likelihood needs.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np
from scipy.special import expit

SHAPE_EPS = 1e-8
_LOGIT_MAX = 36.0  # u in [2.3e-16, 1 - 2.3e-16]
_EPS = np.finfo(float).eps


class GldRootError(RuntimeError):
    pass


@dataclass(frozen=True)
class GldParams:
    lam1: float
    lam2: float
    lam3: float
    lam4: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(np.isfinite(vals)):
            raise ValueError(f"GLD parameters must be finite: {vals}")
        if not self.lam2 > 0:
            raise ValueError(f"GLD scale lam2 must be positive, got {self.lam2}")

    def arrays(self):
        return tuple(np.float64(v) for v in astuple(self))


def _box_cox(log_u, lam):
    """(u**lam - 1) / lam written via expm1, with the log limit at lam -> 0."""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < SHAPE_EPS
    safe = np.where(small, 1.0, lam)
    return np.where(small, log_u, np.expm1(safe * log_u) / safe)


def _box_cox_dlam(log_u, lam):
    """Derivative of :func:`_box_cox` with respect to ``lam``."""
    x = lam * log_u
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    h = np.where(small, 0.5 + x / 3.0 + x * x / 8.0, (xs * np.exp(xs) - np.expm1(xs)) / (xs * xs))
    return log_u * log_u * h


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    return u


def _standard_q(u, lam3, lam4):
    return _box_cox(np.log(u), lam3) - _box_cox(np.log1p(-u), lam4)


def quantile(u, lam1, lam2, lam3, lam4):
    return lam1 + _standard_q(u, lam3, lam4) / lam2


def quantile_density(u, lam2, lam3, lam4):
    """dQ/du = (u**(lam3-1) + (1-u)**(lam4-1)) / lam2."""
    return (np.exp((lam3 - 1) * np.log(u)) + np.exp((lam4 - 1) * np.log1p(-u))) / lam2


def support(lam1, lam2, lam3, lam4):
    lam1, lam2, lam3, lam4 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (lam1, lam2, lam3, lam4)))
    with np.errstate(divide="ignore"):
        lo = np.where(lam3 > 0, lam1 - 1.0 / (lam2 * np.where(lam3 > 0, lam3, 1.0)), -np.inf)
        hi = np.where(lam4 > 0, lam1 + 1.0 / (lam2 * np.where(lam4 > 0, lam4, 1.0)), np.inf)
    return lo, hi


def _log_parts(z):
    """log(u) and log(1 - u) for u = expit(z), accurate in both tails."""
    return -np.logaddexp(0.0, -z), -np.logaddexp(0.0, z)


def _standard_q_z(z, lam3, lam4):
    log_u, log_v = _log_parts(z)
    return _box_cox(log_u, lam3) - _box_cox(log_v, lam4)


def log_quantile_density_z(z, lam2, lam3, lam4):
    """log dQ/du evaluated at u = expit(z)."""
    log_u, log_v = _log_parts(z)
    return np.logaddexp((lam3 - 1) * log_u, (lam4 - 1) * log_v) - np.log(lam2)


def solve_z(y, lam1, lam2, lam3, lam4, max_iter: int = 200, tol: float = 1e-12, z0=None):
    """Solve Q(expit(z)) = y for z = logit(u).

    Returns ``(z, inside)``. Points outside the support are flagged with
    ``inside`` False and pinned to the end of the search bracket. A coarse
    bisection on z comes first, then bracket-safeguarded Newton; a starting
    guess ``z0`` (e.g. the previous solution) replaces the bisection.
    """
    y, lam1, lam2, lam3, lam4 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y, lam1, lam2, lam3, lam4)))
    shape = y.shape
    y, lam1, lam2, lam3, lam4 = (v.ravel() for v in (y, lam1, lam2, lam3, lam4))
    target = (y - lam1) * lam2  # standardized quantile value
    lo = np.full(y.shape, -_LOGIT_MAX)
    hi = np.full(y.shape, _LOGIT_MAX)
    below = target <= _standard_q_z(lo, lam3, lam4)
    above = target >= _standard_q_z(hi, lam3, lam4)
    s_lo, s_hi = support(0.0, 1.0, lam3, lam4)
    inside = (target > s_lo) & (target < s_hi)
    if z0 is None:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            q_mid = _standard_q_z(mid, lam3, lam4)
            go_up = q_mid < target
            lo = np.where(go_up | (q_mid == target), mid, lo)  # an exact hit collapses the bracket
            hi = np.where(go_up, hi, mid)
            if np.all(hi - lo < 1e-2):
                break
        z = 0.5 * (lo + hi)
    else:
        z = np.clip(np.broadcast_to(np.asarray(z0, dtype=float), shape).ravel(), -_LOGIT_MAX, _LOGIT_MAX)
    z = np.array(z, dtype=float)
    active = np.flatnonzero(~(below | above))
    last = np.full(y.shape, np.inf)  # previous step length, for the slow-progress test
    for _ in range(max_iter):
        if active.size == 0:
            break
        za, l3, l4 = z[active], lam3[active], lam4[active]
        f = _standard_q_z(za, l3, l4) - target[active]
        lo_a = np.where(f < 0, za, lo[active])
        hi_a = np.where(f > 0, za, hi[active])
        log_u, log_v = _log_parts(za)
        # dQ/dz = dQ/du * u (1 - u), standardized units
        dq = np.exp(l3 * log_u + log_v) + np.exp(l4 * log_v + log_u)
        z_new = za - f / dq
        # bisect whenever Newton leaves the bracket or fails to halve the previous step
        ok = (z_new >= lo_a) & (z_new <= hi_a) & (np.abs(z_new - za) <= 0.5 * last[active])
        z_new = np.where(ok, z_new, 0.5 * (lo_a + hi_a))
        z_new = np.where(f == 0, za, z_new)
        last[active] = np.abs(z_new - za)
        lo[active], hi[active], z[active] = lo_a, hi_a, z_new
        # |du| <= |dz| / 4, so this meets the tolerance in u; the floor is rounding noise in z
        active = active[np.abs(z_new - za) >= np.maximum(4 * tol, 8 * _EPS * (1 + np.abs(za)))]
    else:
        raise GldRootError("GLD cdf root solve did not converge")
    z = np.where(below, -_LOGIT_MAX, np.where(above, _LOGIT_MAX, z))
    return z.reshape(shape), inside.reshape(shape)


def solve_u(y, lam1, lam2, lam3, lam4, tol: float = 0.0):
    """Solve Q(u) = y to machine precision by default; returns ``(u, inside)`` with u set to 0/1 outside the support."""
    z, inside = solve_z(y, lam1, lam2, lam3, lam4, tol=tol)
    u = expit(z)
    target_high = z > 0
    u = np.where(inside, u, np.where(target_high, 1.0, 0.0))
    return u, inside


def cdf(y, lam1, lam2, lam3, lam4):
    u, _ = solve_u(y, lam1, lam2, lam3, lam4)
    return u


def logpdf(y, lam1, lam2, lam3, lam4):
    z, inside = solve_z(y, lam1, lam2, lam3, lam4)
    return np.where(inside, -log_quantile_density_z(z, lam2, lam3, lam4), -np.inf)


# scalar-parameter API

def gld_quantile(p: GldParams, u):
    return quantile(_check_u(u), *p.arrays())


def gld_quantile_density(p: GldParams, u):
    _, lam2, lam3, lam4 = p.arrays()
    return quantile_density(_check_u(u), lam2, lam3, lam4)


def gld_cdf(p: GldParams, y):
    return cdf(y, *p.arrays())


def gld_pdf(p: GldParams, y):
    return np.exp(logpdf(y, *p.arrays()))


def gld_support(p: GldParams) -> tuple[float, float]:
    lo, hi = support(*p.arrays())
    return float(lo), float(hi)


def gld_sample(p: GldParams, n: int, rng: np.random.Generator):
    return quantile(rng.random(n).clip(1e-300, None), *p.arrays())
