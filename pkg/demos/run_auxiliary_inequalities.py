"""The auxiliary-function machinery: exact identity, weight thresholds,
and the remainder inequality for a kernel that is not a pure power.

The composite eta^2 (d_e u)^2 + sigma u^2 satisfies an exact algebraic
identity relating the operator route to a bilinear route; inequalities
follow once sigma passes a threshold, located here by doubling plus
bisection and re-verified with fresh quadrature."""

import numpy as np

from fracbern.kernels import fractional_kernel, custom_kernel, \
    normalizing_constant
from fracbern.funcspace import gaussian_bump, make_cutoff
from fracbern.bernstein import (check_supert_identity,
                                check_first_order_fraclap,
                                check_conto_traccia, sigma_affinity)

u = gaussian_bump(1, 0.0, 1.0) + gaussian_bump(1, 0.8, 0.6, -0.5)
eta = make_cutoff(0.25, 0.5, n=1)
K = fractional_kernel(1, 0.5)

print("exact identity, four variants at x = 0.2:")
for variant in ["directional", "positive-part", "gradient", "incremental"]:
    r = check_supert_identity(K, u, eta, 1.5, variant, 0.2)
    print("  %-14s |D1 - D2| = %.2e  (budget %.2e)  %s"
          % (variant, r["residual"], r["error_budget"],
             "ok" if r["pass"] else "VIOLATED"))

print()
print("weight threshold for the first-order inequality, s = 1/2:")
probes = np.linspace(-0.8, 0.8, 9)
sigma0, reports = check_first_order_fraclap(u, eta, np.array([1.0]), 0.5,
                                            probes)
print("  sigma0 = %.4f; verified at 1x, 2x, 4x: %s"
      % (sigma0, [r.verdict for r in reports]))

res, coll, slope_fit, slope_direct = sigma_affinity(
    u, eta, np.array([1.0]), 0.5, 0.3, (2.0, 4.0, 8.0))
print("  residual is affine in the weight: collinearity defect %.1e" % coll)
print("  slope %.6f vs direct quadrature of the squared-difference "
      "integral %.6f" % (slope_fit, slope_direct))

print()
print("remainder inequality for a log-modulated (non-power) kernel:")
s, n = 0.5, 1
c = normalizing_constant(n, s)


def dens(z):
    r = np.linalg.norm(z, axis=1)
    return c * r ** (-n - 2 * s) * (2.0 + np.sin(np.log(r)))


def rt(a):
    T = np.log(a)
    return c * (2 * a ** (-2 * s) / (2 * s)
                + np.exp(-2 * s * T) * (2 * s * np.sin(T) + np.cos(T))
                / (4 * s * s + 1))


def rm2(r):
    T, q = np.log(r), 2 - 2 * s
    return c * (2 * r ** q / q
                + np.exp(q * T) * (q * np.sin(T) - np.cos(T)) / (q * q + 1))


Kc = custom_kernel(n, s, dens, C1=c / (s * (1 - s)), C2=3 * c / (s * (1 - s)),
                   C3=40.0, radial_tail=rt, radial_moment2=rm2)
eta2 = make_cutoff(0.5, 1.0, n=1)
for eps in [0.1, 0.05]:
    sel, rep = check_conto_traccia(Kc, u, eta2, eps)
    print("  eps=%.2f: taper scale delta=%g (J3=%.2e <= eps^2), "
          "sigma_eps=%.4g, holds=%s" % (eps, sel.delta, sel.J3,
                                        sel.sigma_eps, rep.verdict))
    print("           without the remainder the inequality held at "
          "%.0f%% of probes (exploration data, never asserted)"
          % (100 * rep.params["eps0_hold_fraction"]))
