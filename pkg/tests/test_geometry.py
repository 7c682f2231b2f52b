import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kricci.errors import (
    BadDimension,
    BadK,
    DegeneratePlane,
    NonOrthonormalInput,
    NonSPDMetric,
    PointOutsideRegion,
    PointTooNearBoundary,
    RegistryMiss,
)
from kricci.geometry import (
    MetricChart,
    chart_distance,
    christoffel_at,
    curvature_packet,
    gram_schmidt,
    make_chart,
    metric_at,
    min_ric_k_sample,
    ric_k,
    ricci_contraction,
    sectional,
    unit_ball_volume,
)

coord = st.floats(-2.0, 2.0, allow_nan=False)


def _frame(chart, x, k, seed):
    G = metric_at(chart, x)
    rng = np.random.default_rng(seed)
    return gram_schmidt(G, rng.standard_normal((k + 1, chart.dim)))


# metric -----------------------------------------------------------------------

def test_euclidean_metric_is_identity():
    assert np.array_equal(metric_at(make_chart("euclidean", {"dim": 4}), np.zeros(4)), np.eye(4))


def test_polar_metric():
    assert np.allclose(metric_at(make_chart("polar2"), [2.0, 0.0]), np.diag([1.0, 4.0]))


def test_stereographic_metric_at_origin():
    G = metric_at(make_chart("stereographic_sphere", {"dim": 2, "radius": 1.0}), [0.0, 0.0])
    assert np.allclose(G, 4 * np.eye(2))


def test_metric_outside_region():
    with pytest.raises(PointOutsideRegion):
        metric_at(make_chart("polar2"), [-1.0, 0.0])


def test_non_spd_metric_rejected():
    bad = MetricChart(2, -np.ones(2), np.ones(2), lambda x: np.diag([1.0, -1.0]) + 0 * x[..., None, :1])
    with pytest.raises(NonSPDMetric):
        metric_at(bad, np.zeros(2))


def test_unknown_chart():
    with pytest.raises(RegistryMiss):
        make_chart("torus")


@settings(max_examples=40, deadline=None)
@given(st.lists(coord, min_size=4, max_size=4))
def test_metric_symmetric_positive(x):
    for cid, params in [("stereographic_sphere", {"dim": 4}), ("warped", {"dim": 4}),
                        ("sphere_flat_product", {"sphere_dim": 2, "flat_dim": 2})]:
        G = metric_at(make_chart(cid, params), x)
        assert np.allclose(G, G.T, rtol=1e-12, atol=0)
        assert np.linalg.eigvalsh(G).min() > 0


# connection and curvature -------------------------------------------------------

def test_euclidean_flat():
    pk = curvature_packet(make_chart("euclidean", {"dim": 4}), [0.3, -1.0, 2.0, 5.0])
    assert np.all(pk.christoffel == 0) and np.all(pk.riemann_lowered == 0)


def test_polar_christoffels():
    chart = make_chart("polar2")
    Gam = christoffel_at(chart, [2.0, 0.0])
    assert Gam[0, 1, 1] == pytest.approx(-2.0)
    assert Gam[1, 0, 1] == pytest.approx(0.5)
    assert Gam[1, 1, 0] == pytest.approx(0.5)
    assert np.allclose(curvature_packet(chart, [2.0, 0.0]).riemann_lowered, 0.0)


def test_finite_difference_matches_analytic():
    ana = make_chart("stereographic_sphere", {"dim": 3, "radius": 1.5})
    fd = MetricChart(ana.dim, ana.lower, ana.upper, ana.metric_fn, label="fd")
    assert fd.derivative_mode == "finite-difference"
    x = np.array([0.4, -0.2, 0.7])
    Ra = curvature_packet(ana, x).riemann_lowered
    Rf = curvature_packet(fd, x).riemann_lowered
    assert np.max(np.abs(Ra - Rf)) < 1e-5


def test_too_near_boundary_in_fd_mode():
    chart = make_chart("warped", {"dim": 2, "extent": 1.0})
    with pytest.raises(PointTooNearBoundary):
        curvature_packet(chart, [1.0 - 1e-6, 0.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(coord, min_size=4, max_size=4))
def test_riemann_symmetries_warped(x):
    chart = make_chart("warped", {"dim": 4})
    assert curvature_packet(chart, x).symmetry_residual() <= chart.tau_sym


# sectional ----------------------------------------------------------------------

def test_sectional_sphere_is_one():
    chart = make_chart("stereographic_sphere", {"dim": 2})
    for x in ([0.0, 0.0], [0.7, -1.1], [2.0, 1.0]):
        assert sectional(chart, x, [1.0, 0.0], [0.3, 1.0]) == pytest.approx(1.0, abs=1e-10)


def test_sectional_euclidean_zero():
    assert sectional(make_chart("euclidean", {"dim": 4}), np.zeros(4), [1, 2, 0, 0], [0, 1, 3, 1]) == 0.0


def test_sectional_product_mixed_plane():
    chart = make_chart("sphere_flat_product", {"sphere_dim": 2, "flat_dim": 2})
    x = [0.3, 0.2, 1.0, -4.0]
    assert sectional(chart, x, [1, 0, 0, 0], [0, 0, 1, 0]) == pytest.approx(0.0, abs=1e-12)
    assert sectional(chart, x, [1, 0, 0, 0], [0, 1, 0, 0]) == pytest.approx(1.0, abs=1e-10)


def test_sectional_degenerate():
    with pytest.raises(DegeneratePlane):
        sectional(make_chart("euclidean", {"dim": 3}), np.zeros(3), [1, 0, 0], [2, 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_sectional_basis_invariance(a, d, c, seed):
    chart = make_chart("sphere_flat_product", {"sphere_dim": 2, "flat_dim": 2})
    x = [0.5, -0.3, 0.0, 1.0]
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((2, 4))
    k1 = sectional(chart, x, X, Y)
    k2 = sectional(chart, x, a * X + c * Y, d * Y + 0.5 * X) if abs(a * d - 0.5 * c) > 1e-3 else k1
    assert k1 == pytest.approx(k2, abs=1e-8)


# Ric_k ----------------------------------------------------------------------------

@pytest.mark.parametrize("R", [1.0, 2.0])
def test_ric_k_sphere4(R):
    chart = make_chart("stereographic_sphere", {"dim": 4, "radius": R})
    x = np.array([0.2, 0.1, -0.3, 0.5])
    fr = _frame(chart, x, 3, 0)
    assert ric_k(chart, x, fr[0], fr[1:]) == pytest.approx(1 / R**2, abs=1e-10)


def test_ric_k_product_flat_directions():
    chart = make_chart("sphere_flat_product", {"sphere_dim": 2, "flat_dim": 2})
    x = [0.4, 0.0, 3.0, 2.0]
    assert ric_k(chart, x, [0, 0, 1, 0], [[0, 0, 0, 1]]) == pytest.approx(0.0, abs=1e-14)


def test_ric_k_rejects_bad_input():
    chart = make_chart("euclidean", {"dim": 4})
    x = np.zeros(4)
    with pytest.raises(NonOrthonormalInput):
        ric_k(chart, x, [1, 0, 0, 0], [[1e-3, 1, 0, 0]])
    with pytest.raises(BadK):
        ric_k(chart, x, [1, 0, 0, 0], np.eye(4)[1:].tolist() + [[0, 0, 0, 0]])
    # nearly orthonormal input is tidied up, not rejected
    assert ric_k(chart, x, [1, 0, 0, 0], [[1e-10, 1, 0, 0]]) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_ric_k_basis_invariance(seed, k):
    chart = make_chart("warped", {"dim": 4})
    x = np.array([0.8, -1.2, 0.4, 2.0])
    fr = _frame(chart, x, k, seed)
    X, V = fr[0], fr[1:]
    rot, _ = np.linalg.qr(np.random.default_rng(seed + 1).standard_normal((k, k)))
    assert ric_k(chart, x, X, V) == pytest.approx(ric_k(chart, x, X, rot @ V), abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_full_ric_k_is_ricci(seed):
    chart = make_chart("sphere_flat_product", {"sphere_dim": 2, "flat_dim": 2})
    x = np.array([0.3, 0.9, -1.0, 0.0])
    pk = curvature_packet(chart, x)
    fr = gram_schmidt(pk.metric, np.random.default_rng(seed).standard_normal((4, 4)))
    val = ric_k(chart, x, fr[0], fr[1:], packet=pk) * 3
    assert val == pytest.approx(ricci_contraction(pk, fr[0]), abs=1e-6)


def test_min_ric_k_sample():
    assert abs(min_ric_k_sample(make_chart("euclidean", {"dim": 4}), 1, 10, 4, 0)) <= 1e-8
    s4 = make_chart("stereographic_sphere", {"dim": 4})
    assert min_ric_k_sample(s4, 3, 10, 4, 0) == pytest.approx(1.0, abs=1e-8)
    assert min_ric_k_sample(s4, 3, 10, 4, 5) == min_ric_k_sample(s4, 3, 10, 4, 5)


def test_min_ric_k_warped_bounded_by_profile():
    prof = {"kind": "exp", "lambda0": 0.5}
    chart = make_chart("warped", {"dim": 4, "profile": prof})
    val = min_ric_k_sample(chart, 1, 30, 8, 1, box=(-np.full(4, 5.0), np.full(4, 5.0)))
    assert val >= -0.5 - 1e-6
    assert val < 0  # radial planes are negatively curved


# constants ----------------------------------------------------------------------

def test_unit_ball_volume():
    assert unit_ball_volume(1) == 2.0
    assert unit_ball_volume(2) == pytest.approx(math.pi, rel=1e-15)
    assert unit_ball_volume(4) == pytest.approx(math.pi**2 / 2, rel=1e-15)
    for bad in (0, -1, 1.5, True):
        with pytest.raises(BadDimension):
            unit_ball_volume(bad)


def test_distance_modes():
    e = make_chart("euclidean", {"dim": 3})
    x = np.array([1.0, 2.0, 2.0])
    assert chart_distance(e, np.zeros(3), x) == pytest.approx(3.0, rel=1e-14)
    assert chart_distance(e, np.zeros(3), x, "exact") == pytest.approx(3.0, rel=1e-14)
    s = make_chart("stereographic_sphere", {"dim": 2})
    x = np.array([0.5, 0.0])
    # the straight chart segment through the pole is a geodesic
    assert chart_distance(s, np.zeros(2), x) == pytest.approx(chart_distance(s, np.zeros(2), x, "exact"), rel=1e-12)
