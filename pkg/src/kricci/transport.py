"""Geodesics, parallel frames and Jacobi matrices along transport rays.

Everything is integrated as one coupled first-order system with RK4:
position ``x``, velocity ``v``, a parallel frame ``E`` (rows are frame
vectors in chart components) and a Jacobi matrix ``P`` with ``P'``.  Rows of
``P`` are Jacobi fields expressed in the frame, so the Jacobi equation is
``P'' = -P S`` with ``S[A, B] = R(v, E_A, v, E_B)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, interpolate

from .errors import (
    BoundViolated,
    LeftChartRegion,
    RadiusExceedsChart,
    SingularPInversion,
    TooFewDirections,
    TraceInequalityViolated,
    UnconvergedODE,
)
from .geometry import (
    MetricChart,
    chart_distance,
    christoffel_at,
    connection_and_curvature,
    gram_schmidt,
    unit_ball_volume,
)
from .ode import (
    TAU_ODE,
    EnvelopeReport,
    ODETrajectory,
    _cumint,
    envelope_check,
    rk4,
    solve_h,
    solve_linear_second_order,
    theta_h_normalizer,
)

TAU_RES = 1e-4
TAU_DET = 1e-5
TAU_CURV = 1e-6


class _Layout:
    """Pack/unpack of the coupled state ``(x, v, E, P, P')``."""

    def __init__(self, N, n_frame, n_jac):
        self.N, self.F, self.K = N, n_frame, n_jac
        sizes = [N, N, n_frame * N, n_jac * n_jac, n_jac * n_jac]
        self.cuts = np.cumsum(sizes)[:-1]
        self.size = int(sum(sizes))

    def unpack(self, y):
        x, v, E, P, Pp = np.split(y, self.cuts, axis=-1)
        b = y.shape[:-1]
        return (x, v, E.reshape(b + (self.F, self.N)),
                P.reshape(b + (self.K, self.K)), Pp.reshape(b + (self.K, self.K)))

    def pack(self, x, v, E, P, Pp):
        b = x.shape[:-1]
        return np.concatenate([x, v, E.reshape(b + (-1,)), P.reshape(b + (-1,)), Pp.reshape(b + (-1,))], axis=-1)


def _curvature_operator(R, v):
    """``M[b, d] = R(v, e_b, v, e_d)`` as a matrix."""
    N = v.shape[-1]
    b = v.shape[:-1]
    # contract first index, then third
    Ra = (v[..., None, :] @ R.reshape(b + (N, N ** 3)))[..., 0, :].reshape(b + (N, N, N))
    return (v[..., None, None, :] @ Ra)[..., 0, :]


def _make_rhs(chart: MetricChart, layout: _Layout, jac_rows):
    """Right-hand side of the coupled system.

    ``jac_rows`` selects which frame vectors the Jacobi matrix is expressed
    in (all of them for transport rays, the transverse ones for volume
    estimates).
    """
    need_curv = layout.K > 0

    def rhs(t, y):
        x, v, E, P, Pp = layout.unpack(y)
        if need_curv:
            _, Gam, R = connection_and_curvature(chart, x)
        else:
            Gam = christoffel_at(chart, x)
        Gv = (Gam @ v[..., None, :, None])[..., 0]          # Gv[k, i] = Gam[k, i, j] v^j
        acc = -(Gv @ v[..., :, None])[..., 0]
        dE = -E @ np.swapaxes(Gv, -1, -2)
        if need_curv:
            Ej = E[..., jac_rows, :]
            S = Ej @ _curvature_operator(R, v) @ np.swapaxes(Ej, -1, -2)
            dPp = -P @ S
        else:
            dPp = Pp
        return layout.pack(v, acc, dE, Pp, dPp)

    return rhs


def _speed(chart, x, v):
    return np.sqrt(np.einsum("...a,...ab,...b->...", v, chart.g(x), v))


def _first_exit(chart, xs, grid):
    inside = chart.contains(xs)
    if np.all(inside):
        return None
    k = int(np.argmin(inside))
    return k, float(grid[k])


@dataclass(frozen=True)
class GeodesicTrajectory:
    grid: np.ndarray
    x: np.ndarray
    v: np.ndarray
    frame: np.ndarray | None = None
    exit_time: float | None = None
    richardson_error: float = 0.0

    def speeds(self, chart: MetricChart) -> np.ndarray:
        return _speed(chart, self.x, self.v)

    @cached_property
    def dense(self):
        return interpolate.CubicHermiteSpline(self.grid, self.x, self.v, axis=0)


def exp_map(chart: MetricChart, x, v, T: float, dt: float, strict: bool = True,
            tol: float = TAU_ODE) -> GeodesicTrajectory:
    """Geodesic ``t -> exp_x(t v)`` on ``[0, T]`` with RK4 step ``dt``.

    If the path leaves the chart region the trajectory is truncated at the
    last interior sample and ``exit_time`` is set; with ``strict`` a
    :class:`LeftChartRegion` is raised instead.
    """
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    if not chart.contains(x):
        raise LeftChartRegion(f"start point {x} outside chart region", 0.0)
    lay = _Layout(chart.dim, 0, 0)
    rhs = _make_rhs(chart, lay, [])
    y0 = lay.pack(x, v, np.zeros((0, chart.dim)), np.zeros((0, 0)), np.zeros((0, 0)))
    grid, ys = rk4(rhs, y0, T, dt)
    xs, vs = ys[:, : chart.dim], ys[:, chart.dim: 2 * chart.dim]
    ex = _first_exit(chart, xs, grid)
    if ex is not None:
        if strict:
            raise LeftChartRegion(f"geodesic left chart region at t = {ex[1]:.6g}", ex[1])
        k = ex[0]
        return GeodesicTrajectory(grid[:k], xs[:k], vs[:k], exit_time=ex[1])
    err = 0.0
    if len(grid) > 1:
        _, ys2 = rk4(rhs, y0, T, (grid[1] - grid[0]) / 2)
        scale = max(1.0, float(np.max(np.abs(ys2[:, : 2 * chart.dim]))))
        err = float(np.max(np.abs(ys[:, : 2 * chart.dim] - ys2[::2, : 2 * chart.dim]))) * 16 / 15 / scale
        if err > tol and strict:
            raise UnconvergedODE(f"geodesic Richardson error {err:.2e} > {tol:.0e}")
    return GeodesicTrajectory(grid, xs, vs, richardson_error=err)


def parallel_frame(chart: MetricChart, geo: GeodesicTrajectory, initial_frame) -> np.ndarray:
    """Parallel transport of the rows of ``initial_frame`` along ``geo``.

    The geodesic is re-integrated jointly with the frame from its initial
    state on the same grid; returns an array ``(len(grid), A, N)``.
    """
    E0 = np.atleast_2d(np.asarray(initial_frame, float))
    lay = _Layout(chart.dim, E0.shape[0], 0)
    rhs = _make_rhs(chart, lay, [])
    y0 = lay.pack(geo.x[0], geo.v[0], E0, np.zeros((0, 0)), np.zeros((0, 0)))
    T = geo.grid[-1]
    dt = geo.grid[1] - geo.grid[0] if len(geo.grid) > 1 else 1.0
    _, ys = rk4(rhs, y0, T, dt)
    return lay.unpack(ys)[2]


# --------------------------------------------------------------------------
# transport rays


def _complete_basis(G, first, span):
    """Orthonormal basis of ``span`` (rows) whose first vector is ``first``.

    ``first`` may be ``None``; rows of ``span`` that become dependent are
    dropped.
    """
    cand = list(span) if first is None else [first] + list(span)
    out = []
    for w in cand:
        w = np.asarray(w, float).copy()
        for e in out:
            w = w - (w @ G @ e) * e
        nrm = np.sqrt(max(w @ G @ w, 0.0))
        if nrm > 1e-9 * max(1.0, np.sqrt(np.asarray(cand[0]) @ G @ np.asarray(cand[0]))):
            out.append(w / nrm)
        if len(out) == len(span):
            break
    return np.array(out)


@dataclass
class TransportRay:
    """Geodesic ``t -> exp(t (D u + y))`` from a submanifold point with the
    adapted parallel frame.

    Frame rows ``0..n-1`` span the tangent space with ``E_1`` along ``D u``;
    rows ``n..n+m-1`` span the normal space with ``E_{n+1}`` along ``y``.
    """

    base_x: np.ndarray
    tangent_part: np.ndarray
    normal_part: np.ndarray
    tangent_basis: np.ndarray
    normal_basis: np.ndarray
    speed_a: float
    angle_s: float
    r_max: float
    step: float
    geodesic: GeodesicTrajectory | None = None

    @property
    def n(self):
        return self.tangent_basis.shape[0]

    @property
    def m(self):
        return self.normal_basis.shape[0]

    @property
    def initial_frame(self):
        return np.vstack([self.tangent_basis, self.normal_basis])

    @property
    def cos2(self):
        return float(np.cos(self.angle_s) ** 2)

    @property
    def sin2(self):
        return float(np.sin(self.angle_s) ** 2)


def make_ray(chart: MetricChart, base_x, Du, y, tangent_span, normal_span, T: float, dt: float) -> TransportRay:
    """Set up a transport ray from chart vectors ``Du`` (tangent) and ``y``
    (normal) at ``base_x``; ``tangent_span``/``normal_span`` are rows spanning
    the tangent and normal spaces."""
    base_x = np.asarray(base_x, float)
    G = chart.g(base_x)
    Du, y = np.asarray(Du, float), np.asarray(y, float)
    nDu = float(np.sqrt(Du @ G @ Du))
    ny = float(np.sqrt(y @ G @ y))
    tb = _complete_basis(G, Du / nDu if nDu > 1e-12 else None, tangent_span)
    nb = _complete_basis(G, y / ny if ny > 1e-12 else None, normal_span)
    a = float(np.hypot(nDu, ny))
    s = float(np.arctan2(ny, nDu)) if a > 0 else 0.0
    return TransportRay(base_x, Du, y, tb, nb, a, s, float(T), float(dt))


@dataclass
class JacobiSystem:
    ray: TransportRay
    grid: np.ndarray
    x: np.ndarray
    v: np.ndarray
    frame: np.ndarray
    P: np.ndarray
    Pp: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    q_valid: np.ndarray
    det: np.ndarray
    det_log: np.ndarray
    conjugate_time: float | None
    hessian_u: np.ndarray
    II: np.ndarray
    mean_curvature_pairing: float
    exit_time: float | None = None

    @property
    def n(self):
        return self.ray.n

    @property
    def m(self):
        return self.ray.m

    @property
    def before_conjugate(self):
        t = self.grid
        if self.conjugate_time is None:
            return np.ones_like(t, dtype=bool)
        return t < self.conjugate_time

    def jacobi_residual(self) -> float:
        """sup of ``|P'' + P S| / (|S| + 1)`` with ``P''`` from a 4th-order
        centered difference of the integrated ``P'``."""
        if len(self.grid) < 5:
            return 0.0
        h = self.grid[1] - self.grid[0]
        Pp = self.Pp
        d2 = (-Pp[4:] + 8 * Pp[3:-1] - 8 * Pp[1:-3] + Pp[:-4]) / (12 * h)
        mid = slice(2, -2)
        res = np.abs(d2 + self.P[mid] @ self.S[mid]).max(axis=(1, 2))
        scale = np.abs(self.S[mid]).max(axis=(1, 2)) + 1.0
        keep = self.before_conjugate[mid]
        return float(np.max(res[keep] / scale[keep])) if np.any(keep) else 0.0

    def symmetry_residual(self) -> tuple[float, float]:
        """Max asymmetry of ``P' P^T`` (all t before conjugacy) and of ``Q``."""
        keep = self.before_conjugate
        M = self.Pp[keep] @ np.swapaxes(self.P[keep], 1, 2)
        a1 = float(np.max(np.abs(M - np.swapaxes(M, 1, 2)) / (1 + np.abs(M).max(axis=(1, 2))[:, None, None]))) if M.size else 0.0
        Qv = self.Q[self.q_valid]
        a2 = float(np.max(np.abs(Qv - np.swapaxes(Qv, 1, 2)) / (1 + np.abs(Qv).max(axis=(1, 2))[:, None, None]))) if Qv.size else 0.0
        return a1, a2


def _tensors_in_ray_basis(G, ray: TransportRay, hessian_c, II_c):
    """Express chart-component bilinear forms in the ray's frame.

    ``hessian_c`` is ``(N, N)`` with ``hess(X, Y) = X^T hessian_c Y`` for
    tangent ``X, Y``; ``II_c`` is ``(N, N, N)`` with ``II(X, Y)^k =
    II_c[k] contracted with X, Y``.
    """
    e, nb = ray.tangent_basis, ray.normal_basis
    hess = e @ hessian_c @ e.T
    IIv = np.einsum("kab,ia,jb->ijk", II_c, e, e)          # chart vectors
    II = np.einsum("ijk,kl,bl->ijb", IIv, G, nb)            # normal components
    return hess, II


def evolve_jacobi(chart: MetricChart, ray: TransportRay, hessian_u, II_at_x,
                  basis: str = "frame", q_margin: int = 10) -> JacobiSystem:
    """Integrate the Jacobi matrix of the transport map along ``ray``.

    ``hessian_u`` (n x n) and ``II_at_x`` (n x n x m) are given in the ray's
    frame when ``basis='frame'``; with ``basis='chart'`` they are chart
    component forms as accepted by :func:`_tensors_in_ray_basis`.
    """
    G0 = chart.g(ray.base_x)
    if basis == "chart":
        hess, II = _tensors_in_ray_basis(G0, ray, np.asarray(hessian_u, float), np.asarray(II_at_x, float))
    else:
        hess, II = np.asarray(hessian_u, float), np.asarray(II_at_x, float)
    n, m = ray.n, ray.m
    N = n + m
    if N != chart.dim:
        raise ValueError(f"n + m = {N} does not match chart dimension {chart.dim}")
    if hess.shape != (n, n) or II.shape != (n, n, m):
        raise ValueError("hessian_u must be (n, n) and II (n, n, m)")
    ycomp = np.array([ray.normal_part @ G0 @ nb for nb in ray.normal_basis])
    Ducomp = np.array([ray.tangent_part @ G0 @ tb for tb in ray.tangent_basis])
    P0 = np.zeros((N, N))
    P0[:n, :n] = np.eye(n)
    Pp0 = np.zeros((N, N))
    Pp0[:n, :n] = hess - II @ ycomp
    Pp0[:n, n:] = np.einsum("ijb,j->ib", II, Ducomp)
    Pp0[n:, n:] = np.eye(m)
    pairing = float(np.trace(hess) - np.trace(II @ ycomp))

    lay = _Layout(N, N, N)
    rhs = _make_rhs(chart, lay, slice(None))
    v0 = ray.tangent_part + ray.normal_part
    y0 = lay.pack(ray.base_x, v0, ray.initial_frame, P0, Pp0)
    grid, ys = rk4(rhs, y0, ray.r_max, ray.step)
    x, v, E, P, Pp = lay.unpack(ys)
    exit_t = None
    ex = _first_exit(chart, x, grid)
    if ex is not None:
        k = ex[0]
        exit_t = ex[1]
        grid, ys, x, v, E, P, Pp = grid[:k], ys[:k], x[:k], v[:k], E[:k], P[:k], Pp[:k]
    ray.geodesic = GeodesicTrajectory(grid, x, v, frame=E, exit_time=exit_t)

    _, _, R = connection_and_curvature(chart, x)
    S = np.einsum("tabcd,ta,tAb,tc,tBd->tAB", R, v, E, v, E)
    det = np.linalg.det(P)
    conj = _conjugate_time(rhs, lay, grid, ys, det)
    with np.errstate(divide="ignore"):
        det_log = np.where(det > 0, np.log(np.abs(det)), -np.inf)

    h = grid[1] - grid[0] if len(grid) > 1 else ray.step
    q_valid = grid > q_margin * h
    if conj is not None:
        q_valid &= grid < conj - h
    Q = np.full_like(P, np.nan)
    if np.any(q_valid):
        try:
            Q[q_valid] = np.linalg.solve(P[q_valid], Pp[q_valid])
        except np.linalg.LinAlgError as exc:
            raise SingularPInversion(str(exc)) from exc
    return JacobiSystem(ray, grid, x, v, E, P, Pp, S, Q, q_valid, det, det_log, conj,
                        hess, II, pairing, exit_t)


def _conjugate_time(rhs, lay, grid, ys, det, tol=1e-8):
    """First ``t > 0`` where ``det P`` changes sign, refined by bisection on a
    single RK4 step from the last positive sample."""
    bad = np.nonzero((det <= 0) & (grid > 0))[0]
    if bad.size == 0:
        return None
    k = int(bad[0])
    if k == 0:
        return float(grid[0])
    t0, y0 = grid[k - 1], ys[k - 1]

    def det_after(s):
        k1 = rhs(t0, y0)
        k2 = rhs(t0 + s / 2, y0 + s / 2 * k1)
        k3 = rhs(t0 + s / 2, y0 + s / 2 * k2)
        k4 = rhs(t0 + s, y0 + s * k3)
        y = y0 + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return np.linalg.det(lay.unpack(y)[3])

    lo, hi = 0.0, grid[k] - t0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if det_after(mid) > 0:
            lo = mid
        else:
            hi = mid
    return float(t0 + 0.5 * (lo + hi))


# --------------------------------------------------------------------------
# trace and determinant diagnostics


@dataclass
class PartialTraces:
    grid: np.ndarray
    trace_tangent: np.ndarray
    trace_normal: np.ndarray
    cos2: float
    sin2: float
    slack_tangent: np.ndarray
    slack_normal: np.ndarray
    tol: float = TAU_CURV

    @property
    def min_slack(self) -> float:
        vals = np.concatenate([self.slack_tangent, self.slack_normal])
        return float(np.min(vals)) if vals.size else 0.0

    @property
    def ok(self) -> bool:
        return self.min_slack >= -self.tol


def lambda_along(system: JacobiSystem, chart: MetricChart, profile, base_point, mode="surrogate"):
    """Samples of ``lambda(d(o, gamma(t)))`` on the system grid."""
    o = np.asarray(base_point, float)
    return profile(chart_distance(chart, o, system.x, mode))


def partial_traces_S(system: JacobiSystem, lam=None, tol: float = TAU_CURV) -> PartialTraces:
    """Tangential and normal partial traces of ``S``.

    Without ``lam`` the slacks are the traces themselves (nonnegative under
    ``Ric_k >= 0``).  With ``lam`` (decay profile along the ray) they are
    ``tr_T S - (cos^2 s - n) lam`` and ``tr_N S - (sin^2 s - m) lam``.
    """
    n = system.n
    S = system.S
    trT = np.trace(S[:, :n, :n], axis1=1, axis2=2)
    trN = np.trace(S[:, n:, n:], axis1=1, axis2=2)
    c2, s2 = system.ray.cos2, system.ray.sin2
    keep = system.before_conjugate
    if lam is None:
        sT, sN = trT, trN
    else:
        lam = np.asarray(lam, float)
        sT = trT - (c2 - n) * lam
        sN = trN - (s2 - system.m) * lam
    scale = 1.0 + np.abs(S).max(axis=(1, 2))
    return PartialTraces(system.grid, trT, trN, c2, s2, (sT / scale)[keep], (sN / scale)[keep], tol)


@dataclass
class RiccatiReport:
    grid: np.ndarray
    residual_tangent: np.ndarray
    residual_normal: np.ndarray
    trace_Q_tangent: np.ndarray
    trace_Q_normal: np.ndarray
    tol: float = TAU_RES

    @property
    def max_residual(self) -> float:
        vals = np.concatenate([self.residual_tangent, self.residual_normal])
        return float(np.max(vals)) if vals.size else -np.inf

    @property
    def ok(self) -> bool:
        return self.max_residual <= self.tol


def _centered_derivative(t, y):
    """4th-order centered difference; NaN where the stencil is incomplete."""
    out = np.full_like(y, np.nan)
    if len(t) < 5:
        return out
    h = t[1] - t[0]
    out[2:-2] = (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * h)
    return out


def riccati_trace_residual(system: JacobiSystem, tol: float = TAU_RES, strict: bool = False) -> RiccatiReport:
    """Residuals of the partial-trace Riccati inequalities.

    ``d/dt tr_T Q + (tr_T Q)^2 / n + tr_T S`` (and the normal analogue with
    ``1/m``) must be ``<= 0``.  ``tr_N Q`` carries an ``m/t`` singularity at
    the origin, so its derivative is taken of ``tr_N Q - m/t`` and the
    ``-m/t^2`` part is added back exactly.  Residuals are relative to
    ``1 + (tr Q)^2/dim + |tr S|``.
    """
    n, m = system.n, system.m
    t = system.grid
    Q, S = system.Q, system.S
    trQT = np.trace(Q[:, :n, :n], axis1=1, axis2=2)
    trQN = np.trace(Q[:, n:, n:], axis1=1, axis2=2)
    trST = np.trace(S[:, :n, :n], axis1=1, axis2=2)
    trSN = np.trace(S[:, n:, n:], axis1=1, axis2=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        dT = _centered_derivative(t, trQT)
        dN = _centered_derivative(t, trQN - m / t) - m / t**2
        rT = (dT + trQT**2 / n + trST) / (1 + trQT**2 / n + np.abs(trST))
        rN = (dN + trQN**2 / m + trSN) / (1 + trQN**2 / m + np.abs(trSN))
    ok = np.isfinite(rT) & np.isfinite(rN) & system.q_valid
    rep = RiccatiReport(t[ok], rT[ok], rN[ok], trQT, trQN, tol)
    if strict and not rep.ok:
        raise TraceInequalityViolated(f"Riccati trace residual {rep.max_residual:.3e} > {tol}")
    return rep


@dataclass
class DetBoundReport:
    grid: np.ndarray
    det: np.ndarray
    bound: np.ndarray
    slack: np.ndarray
    lemma_bound: np.ndarray
    lemma_slack: np.ndarray
    mode: str
    tol: float = TAU_DET

    @property
    def min_rel_slack(self) -> float:
        if not self.slack.size:
            return 0.0
        return float(np.min(self.slack / np.maximum(np.abs(self.bound), 1e-300)))

    @property
    def min_rel_lemma_slack(self) -> float:
        if not self.lemma_slack.size:
            return 0.0
        return float(np.min(self.lemma_slack / np.maximum(np.abs(self.lemma_bound), 1e-300)))

    @property
    def ok(self) -> bool:
        return self.min_rel_slack >= -self.tol


def det_bound_check(system: JacobiSystem, f_at_x: float, mode: str = "nonnegative",
                    b0: float = 0.0, b1: float = 0.0, r0: float = 0.0,
                    lemma_tol: float = 0.0, tol: float = TAU_DET,
                    strict: bool = False) -> DetBoundReport:
    """Compare ``det P(t)`` with its comparison bounds for ``0 < t < t_conj``.

    ``bound`` is the pairing form: ``(1 + t p/n)^n t^m`` in the nonnegative
    case and ``(2 b1 + 1/t + p/n)^n t^(n+m) e^((n+m-1)(2 r0 b1 + b0))`` in
    the asymptotic case, with ``p`` the recorded mean-curvature pairing.
    ``lemma_bound`` replaces ``p`` by its pointwise upper bound in terms of
    ``f`` (``n f^(1/(n-1))``, minus ``2 n b1`` in the asymptotic case);
    ``lemma_tol`` widens that upper bound to absorb discretization error in
    the recovered pairing.
    """
    n, m = system.n, system.m
    t = system.grid
    keep = system.before_conjugate & (t > 0)
    t = t[keep]
    det = system.det[keep]
    p = system.mean_curvature_pairing
    fpow = f_at_x ** (1.0 / (n - 1)) if n > 1 else f_at_x
    if mode == "nonnegative":
        base = 1 + t * p / n
        bound = np.where(base > 0, base, 0.0) ** n * t**m
        lemma = t**m * (1 + t * (fpow + lemma_tol / n)) ** n
    elif mode == "asymptotic":
        ex = np.exp((n + m - 1) * (2 * r0 * b1 + b0))
        base = 2 * b1 + 1 / t + p / n
        bound = np.where(base > 0, base, 0.0) ** n * t ** (n + m) * ex
        lemma = t**m * (1 + t * (fpow + lemma_tol / n)) ** n * ex
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rep = DetBoundReport(t, det, bound, bound - det, lemma, lemma - det, mode, tol)
    if strict and not rep.ok:
        raise BoundViolated(f"det P exceeds comparison bound (rel slack {rep.min_rel_slack:.3e})")
    return rep


def log_det_derivative_slack(system: JacobiSystem, tol: float = TAU_RES) -> float:
    """Min over valid samples of ``bound - d/dt log det P`` (relative), with
    ``bound = n p/(t p + n) + m/t``; only meaningful under ``Ric_k >= 0``."""
    n, m = system.n, system.m
    t = system.grid
    keep = system.q_valid
    if not np.any(keep):
        return 0.0
    trQ = np.trace(system.Q, axis1=1, axis2=2)
    p = system.mean_curvature_pairing
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = n * p / (t * p + n) + m / t
        slack = (bound - trQ) / (1 + np.abs(bound))
    ok = keep & np.isfinite(slack) & (t * p + n > 0)
    return float(np.min(slack[ok])) if np.any(ok) else 0.0


# --------------------------------------------------------------------------
# asymptotic volume ratio


@dataclass
class AVRResult:
    estimate: float
    stderr: float
    radius: float
    n_dirs: int
    mode: str
    n_conjugate: int
    normalizer: float
    caveat: str = ("cut points before the first conjugate point are not detected; "
                   "the estimate is an upper bound where the cut locus precedes conjugacy")

    def to_dict(self):
        return {
            "estimate": self.estimate, "stderr": self.stderr, "radius": self.radius,
            "n_dirs": self.n_dirs, "mode": self.mode, "n_conjugate": self.n_conjugate,
            "normalizer": self.normalizer, "caveat": self.caveat,
        }


def avr_estimate(chart: MetricChart, base_point, r: float, n_dirs: int, seed: int,
                 mode: str = "theta", profile=None, n_steps: int = 200) -> AVRResult:
    """Monte Carlo estimate of the volume ratio of the geodesic ball.

    For each of ``n_dirs`` uniformly distributed unit directions the
    transverse Jacobi determinant is integrated along the radial geodesic
    up to ``r`` (or the first conjugate time).  ``mode='theta'`` divides by
    ``|B^N| r^N``; ``mode='theta_h'`` by the model volume built from the
    comparison function of ``profile``.
    """
    if n_dirs < 100:
        raise TooFewDirections(f"n_dirs = {n_dirs} < 100")
    if mode not in ("theta", "theta_h"):
        raise ValueError(f"unknown mode {mode!r}")
    N = chart.dim
    q = np.asarray(base_point, float)
    G = chart.g(q)
    Linv_T = np.linalg.inv(np.linalg.cholesky(G)).T    # maps ON coefficients to chart vectors
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n_dirs, N))
    U = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    # orthonormal completion in coefficient space, first row = direction;
    # the axis most aligned with the direction is dropped to stay well conditioned
    drop = np.argmax(np.abs(U), axis=1)
    axes = np.array([np.delete(np.eye(N), j, axis=0) for j in range(N)])
    frames_c = gram_schmidt(np.eye(N), np.concatenate([U[:, None, :], axes[drop]], axis=1))
    E0 = frames_c @ Linv_T.T
    K = N - 1
    lay = _Layout(N, N, K)
    rhs = _make_rhs(chart, lay, slice(1, N))
    P0 = np.zeros((n_dirs, K, K))
    Pp0 = np.broadcast_to(np.eye(K), (n_dirs, K, K))
    y0 = lay.pack(np.broadcast_to(q, (n_dirs, N)), E0[:, 0, :], E0, P0, Pp0)
    # rays past the chart edge may overflow; containment is checked right after
    with np.errstate(over="ignore", invalid="ignore"):
        grid, ys = rk4(rhs, y0, r, r / n_steps)
    x, v, E, P, Pp = lay.unpack(ys)
    if not np.all(chart.contains(x)):
        raise RadiusExceedsChart(f"geodesic ball of radius {r} leaves the chart region")
    det = np.linalg.det(P)                          # (T, D)
    positive = (det > 0) | (grid[:, None] == 0)
    alive = np.cumprod(positive, axis=0).astype(bool)
    integrand = np.where(alive, det, 0.0)
    per_dir = integrate.simpson(integrand, x=grid, axis=0)
    n_conj = int(np.sum(~alive[-1]))
    sphere_area = N * unit_ball_volume(N)
    if mode == "theta":
        normalizer = unit_ball_volume(N) * r**N
    else:
        normalizer = theta_h_normalizer(solve_h(profile, r, min(r / n_steps, 1e-2)), N, r)
    vals = sphere_area * per_dir / normalizer
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(n_dirs))
    return AVRResult(est, se, float(r), int(n_dirs), mode, n_conj, float(normalizer))


# --------------------------------------------------------------------------
# asymptotic comparison along a ray


def _restrict(traj: ODETrajectory, mask) -> ODETrajectory:
    return ODETrajectory(traj.grid[mask], traj.values[mask], traj.derivs[mask],
                         traj.step, traj.richardson_error, traj.tol)


def riccati_phi(system: JacobiSystem) -> tuple[ODETrajectory, ODETrajectory]:
    """``phi`` and ``phi~`` built from the Riccati partial traces on the
    range where ``Q`` is available.

    Their logarithmic derivatives are ``tr_T Q / n`` and ``tr_N Q / m``; the
    values are normalized to agree with ``1 + t p/n`` and ``t`` at the first
    valid sample, which does not affect any log-derivative comparison.
    """
    n, m = system.n, system.m
    mask = system.q_valid
    t = system.grid[mask]
    Q = system.Q[mask]
    lt = np.trace(Q[:, :n, :n], axis1=1, axis2=2) / n
    ln_ = np.trace(Q[:, n:, n:], axis1=1, axis2=2) / m
    h = system.grid[1] - system.grid[0]
    if t.size == 0:
        empty = np.zeros(0)
        return (ODETrajectory(empty, empty, empty, h), ODETrajectory(empty, empty, empty, h))
    p = system.mean_curvature_pairing
    phi = (1 + t[0] * p / n) * np.exp(_cumint(t, lt))
    phit = t[0] * np.exp(_cumint(t, ln_))
    return (ODETrajectory(t, phi, phi * lt, h), ODETrajectory(t, phit, phit * ln_, h))


@dataclass
class ComparisonReport:
    envelope: EnvelopeReport
    psi_det_slack: float           # min relative slack of det P <= psi^n psi~^m
    log_slack_tangent: float       # min of psi'/psi - phi'/phi
    log_slack_normal: float
    trace_slack: float             # partial-trace curvature bounds
    lam: np.ndarray
    psi: ODETrajectory
    psi_tilde: ODETrajectory
    tol: float = TAU_RES

    @property
    def ok(self) -> bool:
        return (self.envelope.ok and self.psi_det_slack >= -TAU_DET
                and min(self.log_slack_tangent, self.log_slack_normal) >= -self.tol
                and self.trace_slack >= -TAU_CURV)

    def summary(self) -> dict:
        out = {"envelope_" + k: v for k, v in self.envelope.min_slacks.items()}
        out.update(psi_det_slack=self.psi_det_slack, log_slack_tangent=self.log_slack_tangent,
                   log_slack_normal=self.log_slack_normal, trace_slack=self.trace_slack)
        return out


def comparison_along_ray(system: JacobiSystem, chart: MetricChart, profile, base_point,
                         b0: float, b1: float, r0: float, distance_mode: str = "surrogate") -> ComparisonReport:
    """Solve the scalar comparison problems along the ray and check the
    envelope, log-derivative and determinant chain.

    The decay profile enters as ``a^2 lambda(d(o, gamma(t)))`` where ``a`` is
    the ray speed; for unit-speed rays this is the unweighted coefficient.
    """
    ray = system.ray
    n, m = system.n, system.m
    a2 = ray.speed_a ** 2
    c_tan = (n - ray.cos2) / n
    c_nor = (m - ray.sin2) / m
    T = system.grid[-1]
    h = system.grid[1] - system.grid[0]
    geo = GeodesicTrajectory(system.grid, system.x, system.v)
    o = np.asarray(base_point, float)
    # coefficient table fine enough for the half-step Richardson solve
    tt = np.linspace(0.0, T, 4 * (len(system.grid) - 1) + 1)
    lam_fine = a2 * profile(chart_distance(chart, o, geo.dense(tt), distance_mode))
    lam_fn = interpolate.CubicSpline(tt, lam_fine)
    lam = lam_fine[::4]

    def solve(c, ic):
        return solve_linear_second_order(lambda s: c * max(float(lam_fn(s)), 0.0), ic, T, h, check=False)

    psi1 = solve(c_tan, (0.0, 1.0))
    psi2 = solve(c_tan, (1.0, 0.0))
    psit = solve(c_nor, (0.0, 1.0))
    p = system.mean_curvature_pairing
    psi = ODETrajectory(psi1.grid, psi2.values + p / n * psi1.values,
                        psi2.derivs + p / n * psi1.derivs, h,
                        max(psi1.richardson_error, psi2.richardson_error))
    env = envelope_check(psi1, psi2, psit, lam, c_tan, c_nor, b0, b1, r0)

    keep = system.before_conjugate & (system.grid > 0) & (psi.values > 0)
    bound = psi.values[keep] ** n * psit.values[keep] ** m
    det_slack = float(np.min((bound - system.det[keep]) / np.maximum(np.abs(bound), 1e-300))) if np.any(keep) else 0.0

    phi, phit = riccati_phi(system)
    mask = system.q_valid
    if phi.grid.size:
        okpos = psi.values[mask] > 0
        s_t = psi.derivs[mask] / np.where(okpos, psi.values[mask], 1.0) - phi.derivs / phi.values
        s_n = psit.derivs[mask] / psit.values[mask] - phit.derivs / phit.values
        scale_t = 1 + np.abs(phi.derivs / phi.values)
        scale_n = 1 + np.abs(phit.derivs / phit.values)
        lt = float(np.min((s_t / scale_t)[okpos])) if np.any(okpos) else 0.0
        ln_ = float(np.min(s_n / scale_n))
    else:
        lt = ln_ = 0.0
    tr = partial_traces_S(system, lam=lam)
    return ComparisonReport(env, det_slack, lt, ln_, tr.min_slack, lam, psi, psit)
