"""Decay profiles and the scalar comparison problems.

A profile lambda(s) bounds the curvature from below far from a base point.
Its moments b0, b1 enter the asymptotic inequality, and h'' = lambda h
gives the model volume used to normalize the volume ratio.

    python demos/02_comparison_ode.py
"""
import numpy as np

from kricci.ode import AsymptoticProfile, compute_b0_b1, solve_h, solve_linear_second_order, theta_h_normalizer
from kricci.geometry import unit_ball_volume

for prof in (AsymptoticProfile("power", 0.5, 3.0), AsymptoticProfile("power", 1.0, 4.0), AsymptoticProfile("exp", 1.0)):
    b0, b1 = compute_b0_b1(prof)
    h = solve_h(prof, 10.0, 1e-2)
    print(f"{prof.kind:>5} lambda0={prof.lambda0} p={prof.p}:  b0={b0:.6f} b1={b1:.6f}  "
          f"h(10)={h.values[-1]:.4f}  h'(10)={h.derivs[-1]:.4f}  (at most e^b0 = {np.exp(b0):.4f})")

# RK4 with a Richardson error estimate: y'' = y from (1, 0) is cosh
tr = solve_linear_second_order(lambda t: 1.0, (1.0, 0.0), 3.0, 1e-3)
print("\ncosh check: max error", np.max(np.abs(tr.values - np.cosh(tr.grid))), " Richardson estimate", tr.richardson_error)

# model volume of the h-ball versus the Euclidean ball
prof = AsymptoticProfile("exp", 0.5)
for r in (1.0, 5.0, 10.0):
    h = solve_h(prof, r, 1e-2)
    ratio = theta_h_normalizer(h, 4, r) / (unit_ball_volume(4) * r**4)
    print(f"r={r:>4}: |B_h(r)| / |B(r)| = {ratio:.4f}")
