"""Surfaces, the Neumann problem and both sides of the inequality.

Solves the auxiliary Neumann problem on a flat disk (exact solution
|x|^2/2), runs the pointwise lemma check, and evaluates the functional
inequality on a disk, a hemisphere and a saddle.

    python demos/04_submanifold.py
"""
import numpy as np

from kricci.geometry import make_chart
from kricci.submanifold import (
    build_immersion,
    functional_lhs,
    functional_rhs,
    isoperimetric_sides,
    lemma_pointwise_check,
    make_density,
    solve_neumann,
)

R4 = make_chart("euclidean", {"dim": 4})
one = make_density("constant")

print("Neumann problem on the unit disk, f = 1")
for ref in (2, 3, 4, 5):
    disk = build_immersion(R4, "flat_disk", {}, ref)
    sol = solve_neumann(disk, one)
    err = disk.l2_error(sol.u, lambda p: 0.5 * np.sum(p**2, axis=-1))
    lem = lemma_pointwise_check(disk, sol)
    print(f"  refinement {ref}: h={disk.mesh.h:.4f}  L2 error {err:.2e}  cg iterations {sol.iterations}  "
          f"lemma positive part {lem.max_positive_part:.2e}")

print("\nfunctional inequality with theta = 1")
for name, params, dens in [("flat_disk", {}, one),
                           ("sphere_cap", {}, one),
                           ("graph_saddle", {"radius": 0.5}, make_density("bump", {"amp": 0.8, "width": 0.25}))]:
    sub = build_immersion(R4, name, params, 4)
    lhs = functional_lhs(sub, dens)["total"]
    rhs = functional_rhs(sub, dens, 1.0)["total"]
    print(f"  {name:<13} LHS {lhs:8.4f}  RHS {rhs:8.4f}  ratio {lhs / rhs:.4f}")

ann = build_immersion(R4, "flat_annulus", {"r_in": 0.5, "r_out": 1.0}, 4)
iso = isoperimetric_sides(ann, 1.0)
print(f"\nannulus isoperimetric: boundary {iso['lhs']:.4f} vs {iso['rhs']:.4f} (ratio {iso['lhs'] / iso['rhs']:.4f})")
