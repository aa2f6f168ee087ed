"""Quasi-Newton minimizer that tolerates infinite objective values.

The likelihood fits need a line search that simply rejects steps leaving the
feasible region (objective = +inf), which scipy's Wolfe searches do not do
reliably.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    n_iter: int
    n_eval: int
    converged: bool


def bfgs(fun_grad, x0, *, max_iter: int = 500, rel_tol: float = 1e-8, grad_tol: float = 1e-7) -> MinimizeResult:
    """Minimize ``fun_grad(x) -> (f, g)`` with BFGS and Armijo backtracking.

    Stops when the relative objective change drops below ``rel_tol`` on two
    consecutive full (not backtracked) quasi-Newton steps, or the gradient max-norm falls below ``grad_tol``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    n_eval = 1
    if not np.isfinite(f):
        raise ValueError("infeasible starting point for the likelihood fit")
    n = x.size
    H = np.eye(n)
    scaled = False
    quiet = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < grad_tol:
            return MinimizeResult(x, f, it - 1, n_eval, True)
        p = -H @ g
        slope = g @ p
        if not slope < 0:
            H = np.eye(n)
            p = -g
            slope = -(g @ g)
        step = 1.0 if scaled else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-12))
        first_step = step
        restarted = False
        while True:
            x_new = x + step * p
            f_new, g_new = fun_grad(x_new)
            n_eval += 1
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope and np.all(np.isfinite(g_new)):
                break
            step *= 0.3
            if step * np.linalg.norm(p) < 1e-14 * (1.0 + np.linalg.norm(x)):
                if restarted or not scaled:
                    # no numerical descent left; a tiny gradient means we are at the minimum
                    small = np.max(np.abs(g)) < max(1e3 * grad_tol, 1e-4 * (1.0 + abs(f)))
                    return MinimizeResult(x, f, it, n_eval, bool(small))
                # stale curvature model: retry once along steepest descent
                restarted = True
                scaled = False
                H = np.eye(n)
                p = -g
                slope = -(g @ g)
                step = min(1.0, 1.0 / max(np.linalg.norm(g), 1e-12))
        s = x_new - x
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if not scaled:
                H = np.eye(n) * (sy / (yv @ yv))
                scaled = True
            rho = 1.0 / sy
            Hy = H @ yv
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (yv @ Hy) + rho) * np.outer(s, s)
        change = abs(f - f_new) / (1.0 + abs(f))
        x, f, g = x_new, f_new, g_new
        # a small change after backtracking says nothing about convergence
        quiet = quiet + 1 if change < rel_tol and step == first_step and scaled else 0
        if quiet >= 2:
            return MinimizeResult(x, f, it, n_eval, True)
    return MinimizeResult(x, f, max_iter, n_eval, False)
