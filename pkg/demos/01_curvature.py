"""Curvature of metric charts.

Builds a few registered charts, evaluates sectional and k-Ricci curvature,
and runs the sampled lower-bound audit that scenarios rely on.

    python demos/01_curvature.py
"""
import numpy as np

from kricci.geometry import curvature_packet, gram_schmidt, make_chart, metric_at, min_ric_k_sample, ric_k, sectional

sphere = make_chart("stereographic_sphere", {"dim": 4, "radius": 2.0})
x = np.array([0.3, -0.1, 0.4, 0.2])
print("round S^4 of radius 2, at", x)
print("  metric diagonal:", np.diag(metric_at(sphere, x)))
print("  sectional curvature of a coordinate plane:", sectional(sphere, x, [1, 0, 0, 0], [0, 1, 0, 0]))

# k-Ricci averages k sectional curvatures against an orthonormal frame
frame = gram_schmidt(metric_at(sphere, x), np.random.default_rng(0).standard_normal((3, 4)))
print("  Ric_2 on a random frame:", ric_k(sphere, x, frame[0], frame[1:]), "(expected 1/R^2 = 0.25)")

product = make_chart("sphere_flat_product", {"sphere_dim": 2, "flat_dim": 2})
y = np.array([0.2, 0.5, 1.0, -1.0])
print("\nS^2 x R^2")
print("  sphere plane:", sectional(product, y, [1, 0, 0, 0], [0, 1, 0, 0]))
print("  mixed plane: ", sectional(product, y, [1, 0, 0, 0], [0, 0, 1, 0]))
print("  sampled min Ric_1:", min_ric_k_sample(product, 1, 20, 8, 0))
print("  sampled min Ric_3:", min_ric_k_sample(product, 3, 20, 8, 0))

warped = make_chart("warped", {"dim": 3, "profile": {"kind": "exp", "lambda0": 0.5}})
pk = curvature_packet(warped, [1.0, 0.5, -0.2])
print("\nwarped model built from h'' = lambda h (finite-difference derivatives)")
print("  derivative mode:", warped.derivative_mode)
print("  Riemann symmetry residual:", pk.symmetry_residual())
print("  sampled min Ric_1:", min_ric_k_sample(warped, 1, 20, 8, 0, box=(-np.full(3, 4.0), np.full(3, 4.0))))
