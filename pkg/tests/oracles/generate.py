"""Regenerate the frozen reference values in values.json.

Every value here is computed independently of the package: closed forms are
evaluated in mpmath at 30 digits, and the few numerical oracles use plain
numpy written from the defining formulas. Run from the repository root:

    python tests/oracles/generate.py
"""
from __future__ import annotations

import itertools
import json
from pathlib import Path

import mpmath as mp
import numpy as np

mp.mp.dps = 30
OUT = Path(__file__).with_name("values.json")


def lognormal_native(mean, cov):
    zeta = mp.sqrt(mp.log(1 + mp.mpf(cov) ** 2))
    return mp.log(mean) - zeta**2 / 2, zeta


def gld_q(u, l1, l2, l3, l4):
    u = mp.mpf(u)
    return l1 + ((u**l3 - 1) / l3 - ((1 - u) ** l4 - 1) / l4) / l2


def norm_cdf(x):
    return (1 + mp.erf(x / mp.sqrt(2))) / 2


def norm_ppf(p):
    return mp.sqrt(2) * mp.erfinv(2 * mp.mpf(p) - 1)


def hyperbolic_count(n_dims, degree, q):
    count = 0
    for beta in itertools.product(range(degree + 1), repeat=n_dims):
        norm = sum(mp.mpf(b) ** q for b in beta) ** (1 / mp.mpf(q)) if any(beta) else 0
        if norm <= degree + mp.mpf("1e-12"):
            count += 1
    return count


def buckling():
    lk, zk = lognormal_native(0.6, 0.10)
    le, ze = lognormal_native(10_000, 0.05)
    ll, zl = lognormal_native(3_000, 0.01)
    zeta = mp.sqrt(zk**2 + ze**2 + 4 * zl**2)
    f_ser = mp.mpf("1.4622e6")
    b4 = 12 * f_ser / mp.pi**2 * mp.exp(2 * ll - lk - le - norm_ppf("0.05") * zeta)
    b4_half = 12 * f_ser / mp.pi**2 * mp.exp(2 * ll - lk - le)
    b = mp.mpf("238.45")
    f_buck_mean_values = mp.mpf("0.6") * mp.pi**2 * 10_000 * b**4 / (12 * mp.mpf(3000) ** 2)
    return {
        "zeta_buck": float(zeta),
        "b_star": float(b4 ** mp.mpf("0.25")),
        "b_star_half": float(b4_half ** mp.mpf("0.25")),
        "f_buck_at_23845_means": float(f_buck_mean_values),
        "f_ser": float(f_ser),
    }


def short_column_g(b, h):
    b, h = mp.mpf(b), mp.mpf(h)
    f, m1, m2, sy = mp.mpf("2.5e6"), mp.mpf("250e6"), mp.mpf("125e6"), mp.mpf(40)
    return 1 - 4 * m1 / (b * h**2 * sy) - 4 * m2 / (b**2 * h * sy) - (f / (b * h * sy)) ** 2


def beam_g_nominal():
    b = h = mp.mpf("0.1")
    fy, load, rho, span = mp.mpf("355e6"), mp.mpf("12e3"), mp.mpf("78.5e3"), mp.mpf(5)
    return b * h**2 * fy / 4 - (load * span / 4 + rho * b * h * span**2 / 8)


def kl_fraction(n_modes, length=1.0, n_time=121, horizon=120.0):
    """Captured variance via the generalized problem C W phi = lam phi (no symmetrization)."""
    t = np.linspace(0.0, horizon, n_time)
    w = np.full(n_time, horizon / (n_time - 1))
    w[[0, -1]] *= 0.5
    c = np.exp(-0.5 * ((t[:, None] - t[None, :]) / length) ** 2)
    vals = np.sort(np.linalg.eigvals(c * w[None, :]).real)[::-1]
    vals = np.clip(vals, 0.0, None)
    return float(vals[:n_modes].sum() / vals.sum())


def gld_normal_gap(lam=0.13, n=4001):
    """max |F_gld(y) - Phi(y)| after matching the GLD to unit variance, on a dense u grid."""
    u = [mp.mpf(k) / (n + 1) for k in range(1, n + 1)]
    q = [gld_q(x, 0, 1, lam, lam) for x in u]
    # moments by midpoint rule in u
    mean = mp.fsum(q) / n
    sd = mp.sqrt(mp.fsum((v - mean) ** 2 for v in q) / n)
    return float(max(abs(x - norm_cdf((v - mean) / sd)) for x, v in zip(u, q))), float(sd)


def main():
    lk, zk = lognormal_native(0.6, 0.10)
    gap, sd = gld_normal_gap()
    values = {
        "lognormal_06_010": {"lam": float(lk), "zeta": float(zk)},
        "norm_ppf_0975": float(norm_ppf("0.975")),
        "hyperbolic_count_2_2_05": hyperbolic_count(2, 2, 0.5),
        "hyperbolic_count_3_4_07": hyperbolic_count(3, 4, 0.7),
        "legendre1_at_05": float(mp.sqrt(3) * mp.mpf("0.5")),
        "gld_q_02_095": float(gld_q("0.95", 0, 1, mp.mpf("0.2"), mp.mpf("0.2"))),
        "gld_qd_02_05": float(2 * mp.mpf("0.5") ** mp.mpf("-0.8")),
        "gld_013_normal_gap": gap,
        "gld_013_std": sd,
        "buckling": buckling(),
        "short_column_g_400_600": float(short_column_g(400, 600)),
        "beam_g_nominal": float(beam_g_nominal()),
        "spce_pdf_xi_sigma01_at0": float(1 / mp.sqrt(2 * mp.pi * mp.mpf("1.01"))),
        "kl_fraction_100": kl_fraction(100),
        "kl_fraction_1_long": kl_fraction(1, length=1e6),
        "normal_tail_2": float(norm_cdf(-2)),
    }
    OUT.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
    print(json.dumps(values, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
