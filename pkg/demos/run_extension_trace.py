"""The harmonic extension of cos x and the trace constant.

At order one half the extension has the closed form e^{-y} cos x; the
weighted normal derivative recovers the operator on the trace up to the
positive constant d_s, which the toolkit pins down by a ratio test."""

import numpy as np

from fracbern.funcspace import plane_wave, gaussian_bump
from fracbern.extension import (extend, weighted_normal_derivative,
                                trace_constant)

E = extend(plane_wave(1.0), 0.5)
print("closed form check, s = 1/2: U(x,y) vs e^{-y} cos x")
for (x, y) in [(0.0, 0.1), (1.0, 0.5), (2.0, 1.0)]:
    u = E.value(x, y)[0]
    print("  (%.1f, %.1f): %+.10f  (exact %+.10f)"
          % (x, y, u, np.exp(-y) * np.cos(x)))

print()
print("weighted normal derivative at x = 0.3:",
      weighted_normal_derivative(E, 0.3), " (cos(0.3) =", np.cos(0.3), ")")

print()
print("trace constant by ratio test (spread certifies x- and u-independence):")
for s in [0.25, 0.5, 0.75]:
    ds, spread = trace_constant(s)
    print("  s=%.2f: d_s = %.8f  (ratio spread %.1e)" % (s, ds, spread))

print()
print("interior equation residual for a gaussian at s = 0.35:")
rep = extend(gaussian_bump(1, 0.0, 1.0), 0.35).verify()
for k, v in rep.items():
    print(" ", k, "=", v)
