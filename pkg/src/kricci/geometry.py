"""Metric charts, connection and curvature, intermediate Ricci curvature.

Sign convention: the lowered tensor ``R[a, b, c, d]`` is arranged so that
``R(X, Y, X, Y) = K(X, Y) * (|X|^2 |Y|^2 - <X, Y>^2)`` with ``K > 0`` on the
round sphere.  With this convention ``Ric_k(X, V)`` is the mean of
``R(X, e_i, X, e_i)`` over an orthonormal basis ``e_i`` of ``V`` and the
Jacobi equation along a geodesic reads ``J'' = -R(J, g') g'``.

All metric callables work on batches: ``x`` has shape ``(..., N)`` and the
metric has shape ``(..., N, N)``.  Derivative arrays are laid out as
``dg[..., k, i, j] = d_k g_ij`` and ``d2g[..., k, l, i, j] = d_k d_l g_ij``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    BadDimension,
    BadK,
    DegeneratePlane,
    NonOrthonormalInput,
    NonSPDMetric,
    PointOutsideRegion,
    PointTooNearBoundary,
    RegistryMiss,
)

TAU_SYM_FD = 1e-6
TAU_SYM_ANALYTIC = 1e-10
FRAME_TOL = 1e-8


@dataclass(frozen=True)
class MetricChart:
    """A coordinate box of the ambient manifold with its metric.

    ``dmetric_fn``/``d2metric_fn`` are optional; without them derivatives
    are taken by central differences with step ``fd_scale * (1 + |x|)``.
    ``complete`` and ``noncompact`` are declarations, never checked.
    """

    dim: int
    lower: np.ndarray
    upper: np.ndarray
    metric_fn: Callable[[np.ndarray], np.ndarray]
    dmetric_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    d2metric_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    distance_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    label: str = ""
    params: dict = field(default_factory=dict)
    complete: bool = True
    noncompact: bool = True
    fd_scale: float = 1e-4

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,) or np.any(hi <= lo):
            raise ValueError("chart region must be a nonempty box in R^dim")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def derivative_mode(self) -> str:
        if self.dmetric_fn is not None and self.d2metric_fn is not None:
            return "analytic"
        return "finite-difference"

    @property
    def tau_sym(self) -> float:
        return TAU_SYM_ANALYTIC if self.derivative_mode == "analytic" else TAU_SYM_FD

    def fd_step(self, x):
        x = np.asarray(x, float)
        return self.fd_scale * (1.0 + np.linalg.norm(x, axis=-1))

    def margin(self, x):
        """Distance from ``x`` to the region boundary (negative outside)."""
        x = np.asarray(x, float)
        return np.min(np.minimum(x - self.lower, self.upper - x), axis=-1)

    def contains(self, x, margin=0.0):
        return self.margin(x) >= margin

    # raw batched evaluations, no region checks ---------------------------

    def g(self, x):
        G = np.asarray(self.metric_fn(np.asarray(x, float)), float)
        return 0.5 * (G + np.swapaxes(G, -1, -2))

    def dg(self, x):
        x = np.asarray(x, float)
        if self.dmetric_fn is not None:
            return np.asarray(self.dmetric_fn(x), float)
        N = self.dim
        d = self.fd_step(x)[..., None, None]
        E = np.eye(N)
        pts = np.concatenate([x[..., None, :] + d * E, x[..., None, :] - d * E], axis=-2)
        G = self.g(pts)
        return (G[..., :N, :, :] - G[..., N:, :, :]) / (2.0 * d[..., None])

    def d2g(self, x):
        x = np.asarray(x, float)
        if self.d2metric_fn is not None:
            return np.asarray(self.d2metric_fn(x), float)
        N = self.dim
        d = self.fd_step(x)
        E = np.eye(N)
        kk, ll = np.triu_indices(N, 1)
        dd = d[..., None, None]
        xs = x[..., None, :]
        stencil = [
            xs,
            xs + dd * E,
            xs - dd * E,
            xs + dd * (E[kk] + E[ll]),
            xs + dd * (E[kk] - E[ll]),
            xs - dd * (E[kk] - E[ll]),
            xs - dd * (E[kk] + E[ll]),
        ]
        sizes = [s.shape[-2] for s in stencil]
        G = self.g(np.concatenate(stencil, axis=-2))
        G0, Gp, Gm, Gpp, Gpm, Gmp, Gmm = np.split(G, np.cumsum(sizes)[:-1], axis=-3)
        d2 = d[..., None, None, None, None] ** 2
        out = np.zeros(x.shape[:-1] + (N, N, N, N))
        idx = np.arange(N)
        out[..., idx, idx, :, :] = (Gp - 2.0 * G0 + Gm) / d2[..., 0, :, :, :]
        mixed = (Gpp - Gpm - Gmp + Gmm) / (4.0 * d2[..., 0, :, :, :])
        out[..., kk, ll, :, :] = mixed
        out[..., ll, kk, :, :] = mixed
        return out


# --------------------------------------------------------------------------
# connection and curvature from metric derivatives


def christoffel_symbols(G, dG):
    """``Gamma[..., k, i, j]`` and the lowered ``Gamma_low[..., l, i, j]``."""
    T = np.einsum("...ilj->...lij", dG) + np.einsum("...jli->...lij", dG) - dG
    low = 0.5 * T
    Gam = np.einsum("...kl,...lij->...kij", np.linalg.inv(G), low)
    return Gam, low


def _contract_e(A, B):
    """``out[..., a, b, c, d] = sum_e A[..., e, b, c] B[..., e, a, d]``."""
    N = A.shape[-1]
    b = A.shape[:-3]
    M = np.swapaxes(A.reshape(b + (N, N * N)), -1, -2) @ B.reshape(b + (N, N * N))
    # M[..., (b c), (a d)] -> [..., a, b, c, d]
    return np.moveaxis(M.reshape(b + (N, N, N, N)), -2, -4)


def riemann_lowered(Gam, low, d2G):
    R = 0.5 * (
        np.einsum("...bcad->...abcd", d2G)
        + np.einsum("...adbc->...abcd", d2G)
        - np.einsum("...acbd->...abcd", d2G)
        - np.einsum("...bdac->...abcd", d2G)
    )
    R += _contract_e(Gam, low)
    R -= np.swapaxes(_contract_e(Gam, low), -1, -2)
    return R


def connection_and_curvature(chart: MetricChart, x):
    """Batched ``(g, Gamma, R)`` at chart points ``x`` without region checks."""
    x = np.asarray(x, float)
    G = chart.g(x)
    Gam, low = christoffel_symbols(G, chart.dg(x))
    return G, Gam, riemann_lowered(Gam, low, chart.d2g(x))


def christoffel_at(chart: MetricChart, x):
    x = np.asarray(x, float)
    G = chart.g(x)
    return christoffel_symbols(G, chart.dg(x))[0]


@dataclass(frozen=True)
class CurvaturePacket:
    point: np.ndarray
    metric: np.ndarray
    christoffel: np.ndarray
    riemann_lowered: np.ndarray

    def R(self, X, Y, Z, W) -> float:
        return float(np.einsum("abcd,a,b,c,d->", self.riemann_lowered, X, Y, Z, W))

    def symmetry_residual(self) -> float:
        """Largest violation of the pair symmetries and first Bianchi identity."""
        R = self.riemann_lowered
        scale = max(1.0, np.max(np.abs(R)))
        res = [
            R + np.swapaxes(R, 0, 1),
            R + np.swapaxes(R, 2, 3),
            R - np.transpose(R, (2, 3, 0, 1)),
            R + np.einsum("iklj->ijkl", R) + np.einsum("iljk->ijkl", R),
        ]
        return float(max(np.max(np.abs(r)) for r in res) / scale)


def _check_spd(G):
    w = np.linalg.eigvalsh(G)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise NonSPDMetric(f"metric not positive definite (min eigenvalue {np.min(w):.3e})")


def metric_at(chart: MetricChart, x) -> np.ndarray:
    x = np.asarray(x, float)
    if not chart.contains(x):
        raise PointOutsideRegion(f"{x} outside chart region of {chart.label}")
    G = chart.g(x)
    _check_spd(G)
    return G


def curvature_packet(chart: MetricChart, x) -> CurvaturePacket:
    x = np.asarray(x, float)
    if not chart.contains(x):
        raise PointOutsideRegion(f"{x} outside chart region of {chart.label}")
    if chart.derivative_mode != "analytic" and chart.margin(x) < 2.0 * chart.fd_step(x):
        raise PointTooNearBoundary(f"{x} within 2*fd_step of the region boundary")
    G, Gam, R = connection_and_curvature(chart, x)
    _check_spd(G)
    return CurvaturePacket(x, G, Gam, R)


def sectional(chart: MetricChart, x, X, Y, packet: CurvaturePacket | None = None) -> float:
    """Sectional curvature of the plane spanned by ``X`` and ``Y``."""
    pk = packet or curvature_packet(chart, x)
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    G = pk.metric
    denom = (X @ G @ X) * (Y @ G @ Y) - (X @ G @ Y) ** 2
    if denom <= 0 or math.sqrt(denom) < 1e-10:
        raise DegeneratePlane("X and Y are (nearly) linearly dependent")
    return pk.R(X, Y, X, Y) / denom


def gram_schmidt(G, vecs):
    """Orthonormalize the rows of ``vecs`` with respect to ``G`` (batched)."""
    vecs = np.array(vecs, dtype=float, copy=True)
    out = np.empty_like(vecs)
    for i in range(vecs.shape[-2]):
        v = vecs[..., i, :]
        for j in range(i):
            e = out[..., j, :]
            v = v - np.einsum("...a,...ab,...b->...", v, G, e)[..., None] * e
        nrm = np.sqrt(np.einsum("...a,...ab,...b->...", v, G, v))
        out[..., i, :] = v / nrm[..., None]
    return out


def ric_k(chart: MetricChart, x, X, V, packet: CurvaturePacket | None = None) -> float:
    """Intermediate Ricci curvature ``Ric_k(X, span V)`` for unit ``X`` and
    ``k`` orthonormal vectors ``V`` (rows) orthogonal to ``X``.

    Inputs within ``1e-8`` of orthonormal are cleaned up by Gram-Schmidt;
    worse inputs are rejected.
    """
    pk = packet or curvature_packet(chart, x)
    G = pk.metric
    X = np.asarray(X, float)
    V = np.atleast_2d(np.asarray(V, float))
    k = V.shape[0]
    if not 1 <= k <= chart.dim - 1:
        raise BadK(f"k = {k} not in [1, {chart.dim - 1}]")
    frame = np.vstack([X, V])
    gram = frame @ G @ frame.T
    if np.max(np.abs(gram - np.eye(k + 1))) > FRAME_TOL:
        raise NonOrthonormalInput("X, V must be g-orthonormal within 1e-8")
    frame = gram_schmidt(G, frame)
    X, V = frame[0], frame[1:]
    R = pk.riemann_lowered
    vals = np.einsum("abcd,a,ib,c,id->i", R, X, V, X, V)
    return float(np.mean(vals))


def ricci_contraction(packet: CurvaturePacket, X) -> float:
    """``g^{jl} R(e_j, X, e_l, X)``: the Ricci curvature in direction ``X``."""
    ginv = np.linalg.inv(packet.metric)
    return float(np.einsum("jl,jblD,b,D->", ginv, packet.riemann_lowered, X, X))


def _random_frames(G, k, rng, n_frames):
    """``n_frames`` random orthonormal ``(X, V)`` frames at a point."""
    N = G.shape[-1]
    Z = rng.standard_normal((n_frames, k + 1, N))
    return gram_schmidt(np.broadcast_to(G, (n_frames, N, N)), Z)


def min_ric_k_sample(
    chart: MetricChart,
    k: int,
    n_points: int,
    n_frames: int,
    seed: int,
    box: tuple | None = None,
    profile=None,
    base_point=None,
    distance_mode: str = "surrogate",
) -> float:
    """Sampled minimum of ``Ric_k`` over points and random orthonormal frames.

    Points are uniform in ``box`` (default: the chart region shrunk by the
    finite-difference margin).  With a decay ``profile`` the minimum of
    ``Ric_k + lambda(d(o, x))`` is returned instead, which is nonnegative
    exactly when ``Ric_k >= -lambda(d(o, .))`` on the samples.  A
    nonnegative result is evidence, not proof.
    """
    if n_points < 1 or n_frames < 1:
        raise ValueError("n_points and n_frames must be >= 1")
    if not 1 <= k <= chart.dim - 1:
        raise BadK(f"k = {k} not in [1, {chart.dim - 1}]")
    rng = np.random.default_rng(seed)
    lo, hi = (chart.lower, chart.upper) if box is None else map(np.asarray, box)
    lo, hi = np.maximum(lo, chart.lower), np.minimum(hi, chart.upper)
    pad = 3.0 * chart.fd_scale * (1.0 + np.max(np.abs(np.stack([lo, hi]))))
    lo, hi = lo + pad, hi - pad
    pts = lo + (hi - lo) * rng.random((n_points, chart.dim))
    G, _, R = connection_and_curvature(chart, pts)
    best = np.inf
    for i in range(n_points):
        fr = _random_frames(G[i], k, rng, n_frames)
        X, V = fr[:, 0, :], fr[:, 1:, :]
        vals = np.einsum("abcd,fa,fib,fc,fid->fi", R[i], X, V, X, V).mean(axis=1)
        if profile is not None:
            o = np.zeros(chart.dim) if base_point is None else np.asarray(base_point, float)
            vals = vals + float(profile(chart_distance(chart, o, pts[i], distance_mode)))
        best = min(best, float(np.min(vals)))
    return best


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in ``R^d``."""
    if isinstance(d, bool) or int(d) != d or d < 1:
        raise BadDimension(f"dimension must be a positive integer, got {d!r}")
    d = int(d)
    k = d // 2
    # pi^k / k! for even d, 2^d k! pi^k / d! for odd d; integer parts stay exact
    if d % 2 == 0:
        return math.pi**k / math.factorial(k)
    return 2**d * math.factorial(k) * math.pi**k / math.factorial(d)


def chart_distance(chart: MetricChart, o, x, mode: str = "surrogate"):
    """Distance from the base point ``o`` to ``x``.

    ``surrogate``: g-length of the straight chart segment from ``o`` to ``x``
    (16-point Gauss-Legendre).  ``exact``: the chart's closed-form distance,
    available only for charts that provide one.
    """
    o = np.asarray(o, float)
    x = np.asarray(x, float)
    if mode == "exact":
        if chart.distance_fn is None:
            raise ValueError(f"chart {chart.label} has no closed-form distance")
        return chart.distance_fn(o, x)
    if mode != "surrogate":
        raise ValueError(f"unknown distance mode {mode!r}")
    nodes, weights = np.polynomial.legendre.leggauss(16)
    s = 0.5 * (nodes + 1.0)
    d = x - o
    pts = o + s[:, None] * d[..., None, :] if d.ndim > 1 else o + s[:, None] * d
    G = chart.g(pts)
    speed = np.sqrt(np.maximum(np.einsum("...a,...sab,...b->...s", d, G, d), 0.0))
    return 0.5 * np.sum(weights * speed, axis=-1)


# --------------------------------------------------------------------------
# chart registry


def euclidean(dim: int = 4, extent: float = 100.0) -> MetricChart:
    N = int(dim)

    def metric(x):
        return np.broadcast_to(np.eye(N), x.shape[:-1] + (N, N)).copy()

    def dmetric(x):
        return np.zeros(x.shape[:-1] + (N, N, N))

    def d2metric(x):
        return np.zeros(x.shape[:-1] + (N, N, N, N))

    def dist(o, x):
        return np.linalg.norm(np.asarray(x) - o, axis=-1)

    return MetricChart(
        N, -extent * np.ones(N), extent * np.ones(N), metric, dmetric, d2metric, dist,
        label="euclidean", params={"dim": N, "extent": extent},
    )


def polar2(r_min: float = 0.05, r_max: float = 50.0) -> MetricChart:
    """Polar coordinates ``(r, theta)`` on the plane: ``dr^2 + r^2 dtheta^2``."""

    def metric(x):
        G = np.zeros(x.shape[:-1] + (2, 2))
        G[..., 0, 0] = 1.0
        G[..., 1, 1] = x[..., 0] ** 2
        return G

    def dmetric(x):
        D = np.zeros(x.shape[:-1] + (2, 2, 2))
        D[..., 0, 1, 1] = 2.0 * x[..., 0]
        return D

    def d2metric(x):
        D = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        D[..., 0, 0, 1, 1] = 2.0
        return D

    return MetricChart(
        2, np.array([r_min, -math.pi]), np.array([r_max, math.pi]), metric, dmetric, d2metric,
        label="polar2", params={"r_min": r_min, "r_max": r_max}, noncompact=True,
    )


def _conformal_sphere_parts(R):
    """Factor ``c = 4R^4/(R^2+|x|^2)^2`` with its first and second derivatives."""

    def c(x):
        return 4.0 * R**4 / (R**2 + np.sum(x * x, axis=-1)) ** 2

    def dc(x):
        q = R**2 + np.sum(x * x, axis=-1)
        return -16.0 * R**4 * x / q[..., None] ** 3

    def d2c(x):
        q = R**2 + np.sum(x * x, axis=-1)[..., None, None]
        N = x.shape[-1]
        return -16.0 * R**4 * np.eye(N) / q**3 + 96.0 * R**4 * x[..., :, None] * x[..., None, :] / q**4

    return c, dc, d2c


def stereographic_sphere(dim: int = 2, radius: float = 1.0, extent: float = 3.0) -> MetricChart:
    """Stereographic chart of the round sphere ``S^dim(radius)``.

    ``g = 4 R^4 / (R^2 + |x|^2)^2 * delta``; the origin is the south pole.
    """
    N, R = int(dim), float(radius)
    c, dc, d2c = _conformal_sphere_parts(R)
    I = np.eye(N)

    def metric(x):
        return c(x)[..., None, None] * I

    def dmetric(x):
        return dc(x)[..., :, None, None] * I

    def d2metric(x):
        return d2c(x)[..., :, :, None, None] * I

    def dist(o, x):
        if np.any(o != 0):
            raise ValueError("closed-form distance only from the chart origin")
        return 2.0 * R * np.arctan(np.linalg.norm(x, axis=-1) / R)

    return MetricChart(
        N, -extent * np.ones(N), extent * np.ones(N), metric, dmetric, d2metric, dist,
        label="stereographic_sphere", params={"dim": N, "radius": R, "extent": extent},
        noncompact=False,
    )


def product_chart(a: MetricChart, b: MetricChart, label: str | None = None) -> MetricChart:
    """Riemannian product; coordinates of ``a`` come first."""
    na, nb = a.dim, b.dim
    N = na + nb
    A, B = slice(0, na), slice(na, N)

    def metric(x):
        G = np.zeros(x.shape[:-1] + (N, N))
        G[..., A, A] = a.g(x[..., A])
        G[..., B, B] = b.g(x[..., B])
        return G

    analytic = a.derivative_mode == "analytic" and b.derivative_mode == "analytic"

    def dmetric(x):
        D = np.zeros(x.shape[:-1] + (N, N, N))
        D[..., A, A, A] = a.dg(x[..., A])
        D[..., B, B, B] = b.dg(x[..., B])
        return D

    def d2metric(x):
        D = np.zeros(x.shape[:-1] + (N, N, N, N))
        D[..., A, A, A, A] = a.d2g(x[..., A])
        D[..., B, B, B, B] = b.d2g(x[..., B])
        return D

    dist = None
    if a.distance_fn is not None and b.distance_fn is not None:
        def dist(o, x):
            o, x = np.asarray(o), np.asarray(x)
            return np.hypot(a.distance_fn(o[..., A], x[..., A]), b.distance_fn(o[..., B], x[..., B]))

    return MetricChart(
        N, np.concatenate([a.lower, b.lower]), np.concatenate([a.upper, b.upper]), metric,
        dmetric if analytic else None, d2metric if analytic else None, dist,
        label=label or f"{a.label}x{b.label}", params={"a": a.params, "b": b.params},
        complete=a.complete and b.complete, noncompact=a.noncompact or b.noncompact,
    )


def sphere_flat_product(sphere_dim: int = 2, flat_dim: int = 2, radius: float = 1.0,
                        extent: float = 3.0, flat_extent: float = 100.0) -> MetricChart:
    ch = product_chart(
        stereographic_sphere(sphere_dim, radius, extent), euclidean(flat_dim, flat_extent),
        label="sphere_flat_product",
    )
    params = {"sphere_dim": sphere_dim, "flat_dim": flat_dim, "radius": radius,
              "extent": extent, "flat_extent": flat_extent}
    return MetricChart(ch.dim, ch.lower, ch.upper, ch.metric_fn, ch.dmetric_fn, ch.d2metric_fn,
                       ch.distance_fn, label="sphere_flat_product", params=params)


@functools.lru_cache(maxsize=16)
def _cached_warp(profile, r_max):
    from .ode import WarpFunction

    return WarpFunction(profile, r_max, dt=1e-2)


def warped(dim: int = 4, profile: dict | None = None, r_max: float = 30.0,
           extent: float | None = None) -> MetricChart:
    """Rotationally symmetric model ``dr^2 + h(r)^2 dw^2`` in Cartesian form.

    ``h`` solves ``h'' = lambda h`` for the given decay profile.  In
    coordinates ``g = xx^T/r^2 + (h/r)^2 (I - xx^T/r^2)``, which is smooth at
    the origin.  Radial planes have curvature ``-lambda(r)`` and tangential
    planes ``(1 - h'^2)/h^2``.  Derivatives are finite differences.
    """
    from .ode import profile_from_spec

    N = int(dim)
    prof = profile_from_spec(profile or {"kind": "exp", "lambda0": 0.5})
    ext = float(extent) if extent is not None else r_max / math.sqrt(N)
    warp = _cached_warp(prof, float(r_max) * 1.05)
    I = np.eye(N)

    def metric(x):
        r2 = np.sum(x * x, axis=-1)
        r = np.sqrt(r2)
        w = warp.ratio(r) ** 2
        safe = np.where(r2 > 0, r2, 1.0)
        outer = x[..., :, None] * x[..., None, :] / safe[..., None, None]
        return outer + w[..., None, None] * (I - outer)

    def dist(o, x):
        if np.any(o != 0):
            raise ValueError("closed-form distance only from the chart origin")
        return np.linalg.norm(x, axis=-1)

    return MetricChart(
        N, -ext * np.ones(N), ext * np.ones(N), metric, None, None, dist,
        label="warped", params={"dim": N, "profile": prof.to_dict(), "r_max": r_max, "extent": ext},
    )


CHARTS: dict[str, Callable[..., MetricChart]] = {
    "euclidean": euclidean,
    "polar2": polar2,
    "stereographic_sphere": stereographic_sphere,
    "sphere_flat_product": sphere_flat_product,
    "warped": warped,
}


def make_chart(chart_id: str, params: dict | None = None) -> MetricChart:
    try:
        factory = CHARTS[chart_id]
    except KeyError:
        raise RegistryMiss(f"unknown chart id {chart_id!r}; known: {sorted(CHARTS)}") from None
    return factory(**(params or {}))
