"""Geodesics, parallel frames and the Jacobi determinant.

Follows one transport ray on the round sphere: integrates the Jacobi
matrix P, compares det P with its comparison bound, checks the Riccati
trace inequalities, and finishes with Monte Carlo volume ratios.

    python demos/03_transport.py
"""
import numpy as np

from kricci.geometry import make_chart
from kricci.ode import AsymptoticProfile
from kricci.transport import (
    avr_estimate,
    det_bound_check,
    evolve_jacobi,
    exp_map,
    make_ray,
    partial_traces_S,
    riccati_trace_residual,
)

S4 = make_chart("stereographic_sphere", {"dim": 4})
geo = exp_map(S4, np.zeros(4), [0.5, 0, 0, 0], 2.0, 1e-2)
print("great circle from the pole: chart radius", np.linalg.norm(geo.x[-1]), "vs tan(1) =", np.tan(1.0))
print("speed drift:", np.ptp(geo.speeds(S4)))

# a ray leaving a surface point with tangent part 0.6 E1 and normal part 0.3 E3
I = np.eye(4)
ray = make_ray(S4, np.zeros(4), 0.5 * 0.6 * I[0], 0.5 * 0.3 * I[2], I[:2], I[2:], 2.0, 1e-2)
system = evolve_jacobi(S4, ray, np.diag([0.4, 0.1]), np.zeros((2, 2, 2)))
db = det_bound_check(system, f_at_x=1.0)
print(f"\nray speed a={ray.speed_a:.3f}, angle s={ray.angle_s:.3f}, conjugate time {system.conjugate_time}")
print("min relative slack of det P below its bound:", db.min_rel_slack)
print("Jacobi residual:", system.jacobi_residual(), " symmetry residuals:", system.symmetry_residual())
tr = partial_traces_S(system)
print("tangential trace of S at t=1:", tr.trace_tangent[100], "(closed form a^2 (n - cos^2 s) =",
      ray.speed_a**2 * (2 - ray.cos2), ")")
print("max Riccati residual (should be <= 0 up to differencing):", riccati_trace_residual(system).max_residual)

print("\nvolume ratios")
print("  R^4, r=3:          ", avr_estimate(make_chart("euclidean", {"dim": 4}), np.zeros(4), 3.0, 200, 0, n_steps=50).estimate)
prod = make_chart("sphere_flat_product", {"sphere_dim": 2, "flat_dim": 2})
for r in (0.1, 1.0):
    res = avr_estimate(prod, np.zeros(4), r, 200, 0, n_steps=50)
    print(f"  S^2 x R^2, r={r}:   {res.estimate:.5f} +- {res.stderr:.5f}")
spec = {"kind": "power", "lambda0": 0.5, "p": 3}
warped = make_chart("warped", {"dim": 3, "profile": spec})
res = avr_estimate(warped, np.zeros(3), 4.0, 100, 0, mode="theta_h", profile=AsymptoticProfile("power", 0.5, 3.0), n_steps=100)
print("  warped model against its own h-normalizer:", res.estimate)
