import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kricci.errors import BadCodimension, DegenerateImmersion, NonPositiveF, NotMinimal, RegistryMiss
from kricci.geometry import make_chart
from kricci.mesh import annulus_mesh, disk_mesh, read_off
from kricci.submanifold import (
    build_immersion,
    functional_lhs,
    functional_rhs,
    induced_geometry,
    isoperimetric_sides,
    lemma_pointwise_check,
    make_density,
    make_immersion,
    normal_disk_samples,
    solve_neumann,
    sobolev_constant,
)

E4 = make_chart("euclidean", {"dim": 4})
S4 = make_chart("stereographic_sphere", {"dim": 4})
ONE = make_density("constant")

SMALL = {
    "flat_disk": {"radius": 0.5},
    "flat_annulus": {"r_in": 0.2, "r_out": 0.5},
    "sphere_cap": {"radius": 0.5, "angle": 1.0},
    "graph_saddle": {"radius": 0.5},
}


# meshes -------------------------------------------------------------------------

@pytest.mark.parametrize("ref", [0, 1, 3])
def test_disk_mesh_is_valid(ref):
    mesh = disk_mesh(ref)
    assert mesh.check()
    assert np.all(mesh.param_areas > 0)
    # boundary is a single closed cycle on the unit circle
    rb = np.linalg.norm(mesh.vertices[mesh.boundary_mask], axis=1)
    assert np.allclose(rb, 1.0)
    assert len(mesh.boundary_edges) == mesh.boundary_mask.sum()


def test_annulus_mesh_two_cycles():
    mesh = annulus_mesh(3)
    r = np.linalg.norm(mesh.vertices[mesh.boundary_mask], axis=1)
    assert set(np.round(r, 12)) == {0.5, 1.0}
    assert mesh.param_areas.sum() == pytest.approx(0.75 * math.pi, rel=0.01)


def test_off_round_trip(tmp_path):
    sub = build_immersion(E4, "sphere_cap", {}, 2)
    path = tmp_path / "cap.off"
    sub.export_off(path)
    V, F = read_off(path)
    assert np.array_equal(F, sub.mesh.triangles)
    assert np.array_equal(V, sub.vertex_geometry.x[:, :3])


# induced geometry ---------------------------------------------------------------

@pytest.mark.parametrize("iid", ["flat_disk", "flat_annulus"])
def test_flat_immersions_are_minimal(iid):
    sub = build_immersion(E4, iid, {}, 3)
    vg = sub.vertex_geometry
    assert np.all(vg.II == 0) and np.all(vg.H == 0)
    assert sub.immersion.minimal


def test_cap_mean_curvature():
    sub = build_immersion(E4, "sphere_cap", {}, 4)
    assert np.max(np.abs(sub.vertex_geometry.H_norm - 2.0)) <= 1e-3
    assert sub.area == pytest.approx(2 * math.pi, rel=1e-3)
    assert sub.boundary_length == pytest.approx(2 * math.pi, rel=1e-3)


def test_saddle_minimal_at_origin():
    sub = build_immersion(E4, "graph_saddle", {"radius": 0.5, "scale": 1.0}, 4)
    pg = induced_geometry(E4, sub.immersion, np.zeros((1, 2)))
    assert pg.H_norm[0] <= 1e-3
    assert np.max(sub.vertex_geometry.H_norm) > 0.1


@pytest.mark.parametrize("chart", [E4, S4], ids=["euclidean", "sphere"])
@pytest.mark.parametrize("iid", sorted(SMALL))
def test_mean_curvature_is_normal(chart, iid):
    sub = build_immersion(chart, iid, SMALL[iid], 3)
    assert sub.max_tangent_H() <= 1e-6
    assert np.all(np.linalg.eigvalsh(sub.vertex_geometry.g) > 0)


@pytest.mark.parametrize("iid", sorted(SMALL))
def test_conormal_outward_unit_tangent(iid):
    sub = build_immersion(E4, iid, SMALL[iid], 3)
    mesh, vg = sub.mesh, sub.vertex_geometry
    nu = sub.conormal
    for a, b in mesh.boundary_edges:
        v = a
        G = vg.G[v]
        assert nu[v] @ G @ nu[v] == pytest.approx(1.0, abs=1e-12)
        # tangent: lies in the span of dF
        coef = np.linalg.lstsq(vg.dF[v].T, nu[v], rcond=None)[0]
        assert np.allclose(coef @ vg.dF[v], nu[v], atol=1e-12)
        # outward: negative against every edge to an interior neighbour
        nbrs = mesh.vertex_adjacency[v].indices
        for w in nbrs[~mesh.boundary_mask[nbrs]]:
            inward = sub.vertex_geometry.x[w] - sub.vertex_geometry.x[v]
            assert nu[v] @ G @ inward < 0


def test_unknown_immersion_and_codimension():
    with pytest.raises(RegistryMiss):
        make_immersion("torus", 4)
    with pytest.raises(BadCodimension):
        build_immersion(make_chart("euclidean", {"dim": 2}), "flat_disk", {}, 1)
    with pytest.raises(DegenerateImmersion):
        build_immersion(E4, "sphere_cap", {"radius": 0.0}, 1)


def test_density_registry():
    assert np.all(make_density("bump", {"amp": 0.5})(np.zeros((3, 2))) == 1.5)
    assert make_density("radial_poly", {"coeffs": [1.0, 2.0]})(np.array([[1.0, 1.0]]))[0] == 5.0
    with pytest.raises(NonPositiveF):
        make_density("constant", {"value": 0.0})
    with pytest.raises(NonPositiveF):
        make_density("radial_poly", {"coeffs": [0.0, 1.0]})
    with pytest.raises(RegistryMiss):
        make_density("spiky")


@pytest.mark.parametrize("m", [1, 2, 3])
def test_normal_disk_samples_in_ball(m):
    Y = normal_disk_samples(m, 64)
    assert Y.shape == (64, m)
    assert np.all(np.linalg.norm(Y, axis=1) <= 1 + 1e-12)
    assert np.array_equal(Y, normal_disk_samples(m, 64))


# Neumann problem ----------------------------------------------------------------

@pytest.fixture(scope="module")
def disk4():
    return build_immersion(E4, "flat_disk", {}, 4)


def test_disk_solution_matches_paraboloid(disk4):
    sol = solve_neumann(disk4, ONE)
    assert sol.scale == pytest.approx(1.0, rel=2e-3)
    assert sol.pde_residual <= 1e-10
    err = disk4.l2_error(sol.u, lambda p: 0.5 * np.sum(p**2, axis=-1))
    assert err <= 0.2 * disk4.mesh.h**2
    interior = ~disk4.mesh.boundary_mask
    assert np.allclose(sol.laplacian[interior], 2.0, atol=5e-2)


def test_constant_density_gauge(disk4):
    base = solve_neumann(disk4, ONE)
    for c in (0.01, 7.5):
        other = solve_neumann(disk4, make_density("constant", {"value": c}))
        assert np.allclose(other.u, base.u, atol=1e-9)
        assert np.allclose(other.f, base.f, rtol=1e-12)


def test_divergence_identity_and_compatibility():
    sub = build_immersion(S4, "sphere_cap", {"radius": 0.5, "angle": 1.0}, 3)
    sol = solve_neumann(sub, make_density("bump", {"amp": 0.8, "width": 0.3}))
    assert sol.divergence_gap <= 1e-8
    assert sol.compatibility_gap <= 1e-8
    assert sol.pde_residual <= 1e-10


def _ring_interpolant(vertices, values):
    # both annulus meshes put vertices on concentric rings of shared radii
    r = np.round(np.linalg.norm(vertices, axis=1), 12)
    th = np.arctan2(vertices[:, 1], vertices[:, 0])
    rings = {rr: (th[r == rr], values[r == rr]) for rr in np.unique(r)}

    def at(p):
        rr = np.round(np.linalg.norm(p, axis=1), 12)
        tt = np.arctan2(p[:, 1], p[:, 0])
        return np.array([np.interp(t, *rings[x], period=2 * np.pi) for x, t in zip(rr, tt)])
    return at


def test_annulus_self_convergence():
    fine = build_immersion(E4, "flat_annulus", {}, 6)
    ref = _ring_interpolant(fine.mesh.vertices, solve_neumann(fine, ONE).u)
    errs = []
    for level in (2, 3, 4):
        sub = build_immersion(E4, "flat_annulus", {}, level)
        d = solve_neumann(sub, ONE).u - ref(sub.mesh.vertices)
        M = sub.lumped_mass
        d -= M @ d / M.sum()
        errs.append(math.sqrt(M @ (d * d)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


def test_annulus_exact_solution():
    # f = 2 after rescaling, so Delta u = 4 with unit outward flux: u = r^2 - log r
    sub = build_immersion(E4, "flat_annulus", {}, 4)
    sol = solve_neumann(sub, ONE)
    r = lambda p: np.linalg.norm(p, axis=-1)  # noqa: E731
    assert sub.l2_error(sol.u, lambda p: r(p) ** 2 - np.log(r(p))) <= 2e-3


def test_solver_rejects_bad_density(disk4):
    f = np.ones(disk4.mesh.n_vertices)
    f[3] = -1.0
    with pytest.raises(NonPositiveF):
        solve_neumann(disk4, f)
    with pytest.raises(ValueError):
        solve_neumann(disk4, ONE, mode="theorem3")


def test_lemma_check_flat_disk(disk4):
    sol = solve_neumann(disk4, ONE)
    rep = lemma_pointwise_check(disk4, sol)
    assert rep.n_checked > 0 and rep.n_samples == 16
    assert rep.max_positive_part_deep <= 2.0 * disk4.mesh.h


def test_lemma_check_cap():
    sub = build_immersion(E4, "sphere_cap", {}, 3)
    rep = lemma_pointwise_check(sub, solve_neumann(sub, ONE))
    assert rep.max_positive_part_deep <= 2.0 * sub.mesh.h


# functionals --------------------------------------------------------------------

def test_flat_disk_functionals(disk4):
    lhs = functional_lhs(disk4, ONE)
    rhs = functional_rhs(disk4, ONE, theta=1.0)
    assert lhs["total"] == pytest.approx(2 * math.pi, rel=5e-3)
    assert lhs["gradient"] == pytest.approx(0.0, abs=1e-12)
    assert rhs["total"] == pytest.approx(2 * math.pi, rel=5e-3)
    assert rhs["constant"] == pytest.approx(math.sqrt(math.pi), rel=1e-14)


def test_hemisphere_lhs():
    sub = build_immersion(E4, "sphere_cap", {}, 4)
    assert functional_lhs(sub, ONE)["total"] == pytest.approx(6 * math.pi, rel=0.01)


def test_theorem2_zero_constants_reduce(disk4):
    a = functional_rhs(disk4, ONE, 0.8)["total"]
    b = functional_rhs(disk4, ONE, 0.8, mode="theorem2", r0=5.0)["total"]
    assert a == b


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3), st.sampled_from(["theorem1", "theorem2"]))
def test_functionals_homogeneous(c, mode):
    sub = _saddle()
    f = make_density("bump", {"amp": 0.6, "width": 0.3})
    l1 = functional_lhs(sub, f, mode, b1=0.2)["total"]
    l2 = functional_lhs(sub, lambda u: c * f(u), mode, b1=0.2)["total"]
    r1 = functional_rhs(sub, f, 0.9, mode, b0=0.1, b1=0.2, r0=1.0)["total"]
    r2 = functional_rhs(sub, lambda u: c * f(u), 0.9, mode, b0=0.1, b1=0.2, r0=1.0)["total"]
    assert l2 == pytest.approx(c * l1, rel=1e-12)
    assert r2 == pytest.approx(c * r1, rel=1e-12)


_SADDLE = []


def _saddle():
    if not _SADDLE:
        _SADDLE.append(build_immersion(E4, "graph_saddle", {"radius": 0.5}, 3))
    return _SADDLE[0]


def test_functional_errors(disk4):
    R3 = make_chart("euclidean", {"dim": 3})
    sub3 = build_immersion(R3, "flat_disk", {}, 2)
    with pytest.raises(BadCodimension):
        functional_rhs(sub3, ONE, 1.0)
    with pytest.raises(BadCodimension):
        isoperimetric_sides(sub3, 1.0)
    with pytest.raises(ValueError):
        functional_rhs(disk4, ONE, 0.0)
    with pytest.raises(NotMinimal):
        isoperimetric_sides(build_immersion(E4, "sphere_cap", {}, 2), 1.0)


def test_isoperimetric_annulus():
    sub = build_immersion(E4, "flat_annulus", {}, 4)
    s = isoperimetric_sides(sub, 1.0)
    assert s["lhs"] == pytest.approx(3 * math.pi, rel=1e-3)
    assert s["rhs"] == pytest.approx(2 * math.sqrt(math.pi) * math.sqrt(0.75 * math.pi), rel=1e-3)
    assert not s["vacuous"]
    v = isoperimetric_sides(sub, 1.0, mode="theorem2", b0=0.0, b1=5.0)
    assert v["vacuous"] and v["rhs"] < 0


def test_sobolev_constant_values():
    assert sobolev_constant(2, 2) == pytest.approx(math.sqrt(math.pi), rel=1e-15)
    assert sobolev_constant(1, 2) == pytest.approx(3 * (4 * math.pi / 3) / (2 * math.pi), rel=1e-15)
