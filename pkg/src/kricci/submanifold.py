"""Parametric immersions of surfaces, induced geometry and the Neumann problem.

Geometry is always evaluated from the analytic immersion at the point where
it is needed (vertices, triangle quadrature points, boundary Gauss points);
only the unknown ``u`` and the density ``f`` are piecewise linear.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.linalg import null_space
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import (
    BadCodimension,
    CompatibilityUnreachable,
    DegenerateImmersion,
    NonPositiveF,
    NotMinimal,
    RegistryMiss,
)
from .geometry import MetricChart, chart_distance, christoffel_at, unit_ball_volume
from .mesh import (
    EDGE_PARAMS,
    EDGE_WEIGHTS,
    TRI7_BARY,
    TRI7_WEIGHTS,
    TRI_BARY,
    TRI_WEIGHTS,
    ParamMesh,
    annulus_mesh,
    disk_mesh,
    write_off,
)

TAU_SOLVE = 1e-10
TAU_MINIMAL = 1e-6


# --------------------------------------------------------------------------
# immersion registry


@dataclass(frozen=True)
class Immersion:
    """``F`` maps parameter points ``(..., 2)`` to chart points ``(..., N)``;
    ``dF`` returns ``(..., 2, N)`` and ``d2F`` ``(..., 2, 2, N)``."""

    label: str
    F: Callable
    dF: Callable
    d2F: Callable
    mesh_fn: Callable[[int], ParamMesh]
    minimal: bool = False
    params: dict = field(default_factory=dict)


def _embed(N, axes, center):
    axes = tuple(int(a) for a in axes)
    if len(set(axes)) != len(axes) or max(axes) >= N:
        raise ValueError(f"axes {axes} invalid for ambient dimension {N}")
    c = np.zeros(N) if center is None else np.asarray(center, float)
    if c.shape != (N,):
        raise ValueError(f"center must have length {N}")
    Pm = np.zeros((len(axes), N))
    Pm[np.arange(len(axes)), axes] = 1.0
    return Pm, c


def flat_disk(N: int, radius: float = 1.0, axes=(0, 1), center=None) -> Immersion:
    Pm, c = _embed(N, axes[:2], center)
    return Immersion(
        "flat_disk",
        lambda u: c + np.asarray(u) @ Pm,
        lambda u: np.broadcast_to(Pm, np.shape(u)[:-1] + Pm.shape).copy(),
        lambda u: np.zeros(np.shape(u)[:-1] + (2, 2, N)),
        lambda ref: disk_mesh(ref, radius),
        minimal=True,
        params={"radius": radius},
    )


def flat_annulus(N: int, r_in: float = 0.5, r_out: float = 1.0, axes=(0, 1), center=None) -> Immersion:
    if not 0 < r_in < r_out:
        raise ValueError("need 0 < r_in < r_out")
    base = flat_disk(N, r_out, axes, center)
    return Immersion("flat_annulus", base.F, base.dF, base.d2F,
                     lambda ref: annulus_mesh(ref, r_in, r_out), minimal=True,
                     params={"r_in": r_in, "r_out": r_out})


def sphere_cap(N: int, radius: float = 1.0, angle: float = math.pi / 2, axes=(0, 1, 2), center=None) -> Immersion:
    """Cap of polar angle ``angle`` around the south pole of a round sphere in
    a Euclidean 3-space; inverse stereographic parametrization over the disk
    of radius ``tan(angle/2)``."""
    if not 0 < angle < math.pi:
        raise ValueError("cap angle must lie in (0, pi)")
    Pm, c = _embed(N, axes[:3], center)
    R = float(radius)

    def F(u):
        u = np.asarray(u, float)
        q = 1.0 + np.sum(u**2, axis=-1, keepdims=True)
        s = np.concatenate([2 * u, q - 2.0], axis=-1) / q
        return c + R * s @ Pm

    def dF(u):
        u = np.asarray(u, float)
        q = (1.0 + np.sum(u**2, axis=-1))[..., None, None]
        I2 = np.eye(2)
        top = 2 * I2 / q - 4 * u[..., :, None] * u[..., None, :] / q**2     # [a, i]
        last = 4 * u[..., :, None] / q**2
        d = np.concatenate([top, last], axis=-1)
        return R * d @ Pm

    def d2F(u):
        u = np.asarray(u, float)
        q = (1.0 + np.sum(u**2, axis=-1))[..., None, None, None]
        I2 = np.eye(2)
        ua = u[..., :, None, None]
        ub = u[..., None, :, None]
        ui = u[..., None, None, :]
        dab = I2[:, :, None]
        top = (-4 * (I2[:, None, :] * ub + I2[None, :, :] * ua) / q**2
               - 4 * ui * dab / q**2 + 16 * ui * ua * ub / q**3)
        last = 4 * dab / q**2 - 16 * ua * ub / q**3
        d = np.concatenate([top, last], axis=-1)
        return R * d @ Pm

    rho = math.tan(angle / 2)
    return Immersion("sphere_cap", F, dF, d2F, lambda ref: disk_mesh(ref, rho),
                     params={"radius": R, "angle": angle})


def graph_saddle(N: int, radius: float = 0.5, scale: float = 1.0, axes=(0, 1, 2), center=None) -> Immersion:
    """Graph of ``scale * (u1^2 - u2^2) / 2`` over a disk."""
    Pm, c = _embed(N, axes[:3], center)
    k = float(scale)

    def F(u):
        u = np.asarray(u, float)
        z = 0.5 * k * (u[..., :1] ** 2 - u[..., 1:2] ** 2)
        return c + np.concatenate([u, z], axis=-1) @ Pm

    def dF(u):
        u = np.asarray(u, float)
        I2 = np.broadcast_to(np.eye(2), u.shape[:-1] + (2, 2))
        dz = (k * u * np.array([1.0, -1.0]))[..., None]
        return np.concatenate([I2, dz], axis=-1) @ Pm

    def d2F(u):
        u = np.asarray(u, float)
        d = np.zeros(u.shape[:-1] + (2, 2, 3))
        d[..., 0, 0, 2] = k
        d[..., 1, 1, 2] = -k
        return d @ Pm

    return Immersion("graph_saddle", F, dF, d2F, lambda ref: disk_mesh(ref, radius),
                     params={"radius": radius, "scale": scale})


IMMERSIONS = {
    "flat_disk": flat_disk,
    "flat_annulus": flat_annulus,
    "sphere_cap": sphere_cap,
    "graph_saddle": graph_saddle,
}


def make_immersion(immersion_id: str, N: int, params: dict | None = None) -> Immersion:
    try:
        factory = IMMERSIONS[immersion_id]
    except KeyError:
        raise RegistryMiss(f"unknown immersion {immersion_id!r}; known: {sorted(IMMERSIONS)}") from None
    return factory(N, **(params or {}))


# --------------------------------------------------------------------------
# densities


DENSITY_KINDS = ("constant", "bump", "radial_poly")


def make_density(kind: str = "constant", params: dict | None = None) -> Callable:
    """Positive density on the parameter domain.

    ``constant`` (value), ``bump`` (``base + amp*exp(-|u-c|^2/width^2)``)
    or ``radial_poly`` (``sum_k coeffs[k] |u|^(2k)``, nonnegative
    coefficients with positive constant term).
    """
    p = dict(params or {})
    if kind == "constant":
        v = float(p.get("value", 1.0))
        if v <= 0:
            raise NonPositiveF(f"constant density must be positive, got {v}")
        return lambda u: np.full(np.shape(u)[:-1], v)
    if kind == "bump":
        base, amp = float(p.get("base", 1.0)), float(p.get("amp", 0.5))
        width = float(p.get("width", 0.5))
        c = np.asarray(p.get("center", [0.0, 0.0]), float)
        if base <= 0 or amp < 0 or width <= 0:
            raise NonPositiveF("bump density needs base > 0, amp >= 0, width > 0")
        return lambda u: base + amp * np.exp(-np.sum((np.asarray(u) - c) ** 2, axis=-1) / width**2)
    if kind == "radial_poly":
        coeffs = np.asarray(p.get("coeffs", [1.0]), float)
        if coeffs[0] <= 0 or np.any(coeffs < 0):
            raise NonPositiveF("radial_poly needs coeffs[0] > 0 and all coeffs >= 0")
        return lambda u: np.polynomial.polynomial.polyval(np.sum(np.asarray(u) ** 2, axis=-1), coeffs)
    raise RegistryMiss(f"unknown density kind {kind!r}")


# --------------------------------------------------------------------------
# induced geometry


@dataclass(frozen=True)
class PointGeometry:
    """Induced geometry at a batch of parameter points."""

    u: np.ndarray
    x: np.ndarray            # chart points
    dF: np.ndarray           # (..., 2, N)
    G: np.ndarray            # ambient metric
    g: np.ndarray            # induced metric (..., 2, 2)
    g_inv: np.ndarray
    sqrt_det: np.ndarray
    christoffel: np.ndarray  # induced, (..., a, b, c) = Gamma^c_ab
    II: np.ndarray           # (..., 2, 2, N) chart vectors
    H: np.ndarray            # (..., N)

    @property
    def H_norm(self):
        return np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", self.H, self.G, self.H), 0.0))

    def pullback(self):
        """``C`` with ``C @ X`` the parameter components of a tangent chart vector."""
        return self.g_inv @ self.dF @ self.G


def induced_geometry(chart: MetricChart, imm: Immersion, u) -> PointGeometry:
    u = np.asarray(u, float)
    x = imm.F(u)
    D = imm.dF(u)
    D2 = imm.d2F(u)
    G = chart.g(x)
    Gam = christoffel_at(chart, x)
    g = D @ G @ np.swapaxes(D, -1, -2)
    det = np.linalg.det(g)
    scale = np.einsum("...aa->...", g) ** 2
    if np.any(det <= 1e-12 * np.maximum(scale, 1e-300)):
        raise DegenerateImmersion("induced metric is (nearly) singular")
    g_inv = np.linalg.inv(g)
    W = D2 + np.einsum("...kij,...ai,...bj->...abk", Gam, D, D)
    WD = np.einsum("...abk,...kl,...dl->...abd", W, G, D)
    chris = np.einsum("...cd,...abd->...abc", g_inv, WD)
    II = W - np.einsum("...abc,...ck->...abk", chris, D)
    H = np.einsum("...ab,...abk->...k", g_inv, II)
    return PointGeometry(u, x, D, G, g, g_inv, np.sqrt(det), chris, II, H)


def normal_basis(pg: PointGeometry, idx) -> np.ndarray:
    """g-orthonormal basis (rows) of the normal space at point ``idx``."""
    D, G = pg.dF[idx], pg.G[idx]
    B = null_space(D @ G).T
    out = []
    for w in B:
        for e in out:
            w = w - (w @ G @ e) * e
        out.append(w / math.sqrt(w @ G @ w))
    return np.array(out)


@dataclass
class ImmersedSubmanifold:
    chart: MetricChart
    immersion: Immersion
    mesh: ParamMesh
    refinement: int

    @property
    def n(self):
        return 2

    @property
    def m(self):
        return self.chart.dim - 2

    @property
    def N(self):
        return self.chart.dim

    @cached_property
    def vertex_geometry(self) -> PointGeometry:
        return induced_geometry(self.chart, self.immersion, self.mesh.vertices)

    @cached_property
    def quad_geometry(self) -> PointGeometry:
        return induced_geometry(self.chart, self.immersion, self.mesh.quadrature_points())

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Area weights ``(T, 3)`` including the induced area element."""
        return self.mesh.param_areas[:, None] * TRI_WEIGHTS[None, :] * self.quad_geometry.sqrt_det

    @cached_property
    def _edge_data(self):
        pts, tang = self.mesh.edge_quadrature_points()
        pg = induced_geometry(self.chart, self.immersion, pts)
        vec = np.einsum("ea,eqak->eqk", tang, pg.dF)
        length = np.sqrt(np.einsum("eqk,eqkl,eql->eq", vec, pg.G, vec))
        return pts, EDGE_WEIGHTS[None, :] * length

    @property
    def edge_weights(self):
        """Length weights ``(E, 3)`` at the boundary Gauss points."""
        return self._edge_data[1]

    @cached_property
    def area(self) -> float:
        return float(np.sum(self.quad_weights))

    @cached_property
    def boundary_length(self) -> float:
        return float(np.sum(self.edge_weights))

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        w = self.quad_weights
        M = np.zeros(self.mesh.n_vertices)
        np.add.at(M, self.mesh.triangles, w @ TRI_BARY)
        return M

    @cached_property
    def conormal(self) -> np.ndarray:
        """Outward unit conormal (chart vector) at boundary vertices; NaN elsewhere."""
        mesh = self.mesh
        vg = self.vertex_geometry
        tang = np.zeros((mesh.n_vertices, 2))
        for a, b in mesh.boundary_edges:
            d = mesh.vertices[b] - mesh.vertices[a]
            d = d / np.linalg.norm(d)
            tang[a] += d
            tang[b] += d
        out = np.full((mesh.n_vertices, self.N), np.nan)
        for v in np.nonzero(mesh.boundary_mask)[0]:
            t = tang[v]
            w = np.array([t[1], -t[0]])      # annihilates t, positive on the outer side
            nu = vg.g_inv[v] @ w
            nu = nu / math.sqrt(nu @ vg.g[v] @ nu)
            out[v] = nu @ vg.dF[v]
        return out

    def max_tangent_H(self) -> float:
        """Max of ``|<H, dF_a>| / (1 + |H|)`` over vertices."""
        vg = self.vertex_geometry
        dots = np.einsum("vk,vkl,val->va", vg.H, vg.G, vg.dF)
        return float(np.max(np.abs(dots) / (1 + vg.H_norm[:, None])))

    def r0(self, base_point, mode: str = "surrogate") -> float:
        d = chart_distance(self.chart, np.asarray(base_point, float), self.vertex_geometry.x, mode)
        return float(np.max(d))

    def export_off(self, path) -> None:
        X = self.vertex_geometry.x
        write_off(path, X[:, :3] if self.N >= 3 else X, self.mesh.triangles)

    def sample_field(self, values) -> tuple[np.ndarray, np.ndarray]:
        """P1 interpolation of vertex values at triangle quadrature points
        and boundary Gauss points."""
        values = np.asarray(values, float)
        tri = values[self.mesh.triangles] @ TRI_BARY.T
        e = self.mesh.boundary_edges
        va, vb = values[e[:, 0]], values[e[:, 1]]
        edge = va[:, None] + EDGE_PARAMS[None, :] * (vb - va)[:, None]
        return tri, edge

    def l2_error(self, values, exact) -> float:
        """L2 distance between the P1 field and ``exact`` (callable on parameter
        points), both taken with mass-weighted mean zero; degree-5 quadrature."""
        T = self.mesh.triangles
        q = np.einsum("qi,tid->tqd", TRI7_BARY, self.mesh.vertices[T])
        pg = induced_geometry(self.chart, self.immersion, q)
        w = self.mesh.param_areas[:, None] * TRI7_WEIGHTS[None, :] * pg.sqrt_det
        d = np.asarray(values, float)[T] @ TRI7_BARY.T - exact(q)
        d = d - np.sum(w * d) / np.sum(w)
        return float(np.sqrt(np.sum(w * d * d)))

    def field_gradients(self, values) -> np.ndarray:
        """Parameter gradient of the P1 interpolant per triangle, ``(T, 2)``."""
        values = np.asarray(values, float)
        return np.einsum("tia,ti->ta", self.mesh.shape_gradients, values[self.mesh.triangles])


def build_immersion(chart: MetricChart, immersion_id: str, params: dict | None = None,
                    refinement: int = 4) -> ImmersedSubmanifold:
    if refinement < 0:
        raise ValueError("refinement must be >= 0")
    imm = make_immersion(immersion_id, chart.dim, params)
    if chart.dim - 2 < 1:
        raise BadCodimension("ambient dimension must exceed the surface dimension")
    mesh = imm.mesh_fn(int(refinement))
    sub = ImmersedSubmanifold(chart, imm, mesh, int(refinement))
    if not np.all(chart.contains(sub.vertex_geometry.x)):
        raise ValueError("immersion leaves the chart region")
    sub.vertex_geometry  # raises DegenerateImmersion early
    return sub


# --------------------------------------------------------------------------
# Neumann problem


@dataclass
class NeumannSolution:
    u: np.ndarray
    f: np.ndarray                 # rescaled density (vertex values)
    scale: float                  # factor applied to the input density
    mode: str
    b1: float
    pde_residual: float           # relative linear-solver residual
    compatibility_gap: float
    divergence_gap: float
    iterations: int
    grad_param: np.ndarray        # (V, 2) vertex gradients (parameter components)
    hess_param: np.ndarray        # (V, 2, 2) covariant Hessian
    grad_norm: np.ndarray         # |D u| at vertices
    laplacian: np.ndarray         # lumped-mass weak Laplacian (NaN on boundary)
    omega_mask: np.ndarray

    def grad_vector(self, sub: ImmersedSubmanifold, v: int) -> np.ndarray:
        vg = sub.vertex_geometry
        return (vg.g_inv[v] @ self.grad_param[v]) @ vg.dF[v]

    def export_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("vertex,u,f,grad_norm,laplacian,omega\n")
            for i in range(len(self.u)):
                fh.write(f"{i},{self.u[i]!r},{self.f[i]!r},{self.grad_norm[i]!r},"
                         f"{self.laplacian[i]!r},{int(self.omega_mask[i])}\n")


def _stiffness(sub: ImmersedSubmanifold, coef_q) -> sparse.csr_matrix:
    """``int coef <grad phi_i, grad phi_j>`` with ``coef`` at quadrature points."""
    qg = sub.quad_geometry
    w = sub.quad_weights * coef_q
    Aeff = np.einsum("tq,tqab->tab", w, qg.g_inv)
    B = sub.mesh.shape_gradients
    Ke = np.einsum("tia,tab,tjb->tij", B, Aeff, B)
    T = sub.mesh.triangles
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = sub.mesh.n_vertices
    return sparse.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _load(sub: ImmersedSubmanifold, vals_q) -> np.ndarray:
    out = np.zeros(sub.mesh.n_vertices)
    np.add.at(out, sub.mesh.triangles, (sub.quad_weights * vals_q) @ TRI_BARY)
    return out


def _boundary_load(sub: ImmersedSubmanifold, vals_e) -> np.ndarray:
    out = np.zeros(sub.mesh.n_vertices)
    w = sub.edge_weights * vals_e
    e = sub.mesh.boundary_edges
    np.add.at(out, e[:, 0], w @ (1 - EDGE_PARAMS))
    np.add.at(out, e[:, 1], w @ EDGE_PARAMS)
    return out


def _gradient_term(sub: ImmersedSubmanifold, fvals) -> np.ndarray:
    """``sqrt(|D f|^2 + f^2 |H|^2)`` at triangle quadrature points."""
    qg = sub.quad_geometry
    fq, _ = sub.sample_field(fvals)
    df = sub.field_gradients(fvals)
    grad2 = np.einsum("ta,tqab,tb->tq", df, qg.g_inv, df)
    return np.sqrt(grad2 + fq**2 * qg.H_norm**2)


@dataclass(frozen=True)
class FunctionalParts:
    boundary: float
    gradient: float
    mass: float
    power: float


def functional_parts(sub: ImmersedSubmanifold, fvals) -> FunctionalParts:
    n = sub.n
    fq, fe = sub.sample_field(fvals)
    return FunctionalParts(
        boundary=float(np.sum(sub.edge_weights * fe)),
        gradient=float(np.sum(sub.quad_weights * _gradient_term(sub, fvals))),
        mass=float(np.sum(sub.quad_weights * fq)),
        power=float(np.sum(sub.quad_weights * fq ** (n / (n - 1)))),
    )


def _fit_derivatives(sub: ImmersedSubmanifold, u: np.ndarray):
    """Least-squares quadratic fit on 2-rings: parameter gradient and Hessian."""
    V = sub.mesh.vertices
    grads = np.zeros((len(V), 2))
    hess = np.zeros((len(V), 2, 2))
    for i, ring in enumerate(sub.mesh.rings(2)):
        d = V[ring] - V[i]
        A = np.column_stack([np.ones(len(ring)), d, 0.5 * d[:, 0] ** 2, d[:, 0] * d[:, 1], 0.5 * d[:, 1] ** 2])
        c = np.linalg.lstsq(A, u[ring], rcond=None)[0]
        grads[i] = c[1:3]
        hess[i] = [[c[3], c[4]], [c[4], c[5]]]
    return grads, hess


def _check_f(fvals):
    if not np.all(np.isfinite(fvals)) or np.any(fvals <= 0):
        raise NonPositiveF("density must be positive at every vertex")


def solve_neumann(sub: ImmersedSubmanifold, f, mode: str = "theorem1", b1: float = 0.0,
                  tol: float = TAU_SOLVE, maxiter: int = 20000) -> NeumannSolution:
    """Solve ``div(f D u) = n f^(n/(n-1)) - sqrt(|Df|^2 + f^2|H|^2) [- 2 n b1 f]``
    with ``<D u, nu> = 1`` on the boundary.

    ``f`` is a callable on parameter points or an array of vertex values.  It
    is first multiplied by the positive constant that makes the discrete
    compatibility condition exact.
    """
    if mode not in ("theorem1", "theorem2"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(sub.mesh.boundary_edges) == 0:
        raise CompatibilityUnreachable("closed surfaces are not supported")
    n = sub.n
    f0 = np.asarray(f(sub.mesh.vertices) if callable(f) else f, float)
    _check_f(f0)
    bb1 = b1 if mode == "theorem2" else 0.0
    parts = functional_parts(sub, f0)
    num = parts.boundary + parts.gradient + 2 * n * bb1 * parts.mass
    if not (num > 0 and parts.power > 0):
        raise CompatibilityUnreachable("no positive rescaling satisfies compatibility")
    c = (num / (n * parts.power)) ** (n - 1)
    fv = c * f0

    fq, fe = sub.sample_field(fv)
    rhs_q = n * fq ** (n / (n - 1)) - _gradient_term(sub, fv) - 2 * n * bb1 * fq
    bnd = _boundary_load(sub, fe)
    load = bnd - _load(sub, rhs_q)
    gap = abs(float(np.sum(load))) / max(1.0, float(np.sum(np.abs(bnd))))
    load_p = load - load.mean()

    K = _stiffness(sub, fq)
    diag = K.diagonal()
    M = LinearOperator(K.shape, matvec=lambda r: r / diag, dtype=float)
    it = [0]

    def count(_):
        it[0] += 1

    u, info = cg(K, load_p, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=count)
    res = float(np.linalg.norm(K @ u - load_p) / max(np.linalg.norm(load_p), 1e-300))
    mass = sub.lumped_mass
    u = u - float(mass @ u) / float(mass.sum())

    Ku = K @ u
    div_gap = abs(float(np.sum(-Ku + bnd)) - float(np.sum(bnd))) / max(1.0, float(np.sum(bnd)))

    grads, hraw = _fit_derivatives(sub, u)
    vg = sub.vertex_geometry
    hess = hraw - np.einsum("vabc,vc->vab", vg.christoffel, grads)
    gnorm = np.sqrt(np.einsum("va,vab,vb->v", grads, vg.g_inv, grads))
    K1 = _stiffness(sub, np.ones_like(fq))
    lap = -(K1 @ u) / mass
    interior = ~sub.mesh.boundary_mask
    lap[~interior] = np.nan
    # twice-differentiated nodal fits carry O(1) trace error; take the trace
    # from the weak Laplacian and keep only the trace-free part of the fit
    tr_fit = np.einsum("vab,vab->v", vg.g_inv, hess)
    shift = np.where(interior, (lap - tr_fit) / sub.n, 0.0)
    hess = hess + shift[:, None, None] * vg.g
    omega = interior & (gnorm < 1.0)
    return NeumannSolution(u, fv, float(c), mode, float(bb1), res, gap, div_gap, it[0],
                           grads, hess, gnorm, lap, omega)


# --------------------------------------------------------------------------
# lemma check


def normal_disk_samples(m: int, count: int) -> np.ndarray:
    """Deterministic low-discrepancy points in the closed unit ball of R^m."""
    h = qmc.Halton(d=m + 1, scramble=False).random(count + 1)[1:]
    if m == 1:
        return (2 * h[:, :1] - 1)
    z = ndtri(np.clip(h[:, :m], 1e-12, 1 - 1e-12))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * h[:, m:] ** (1.0 / m)


@dataclass
class LemmaReport:
    max_positive_part: float
    max_positive_part_deep: float     # vertices not adjacent to the boundary
    n_checked: int
    n_samples: int
    mesh_h: float
    per_vertex: np.ndarray

    def to_dict(self):
        return {"max_positive_part": self.max_positive_part,
                "max_positive_part_deep": self.max_positive_part_deep,
                "n_checked": self.n_checked, "n_samples": self.n_samples,
                "mesh_h": self.mesh_h}


def lemma_pointwise_check(sub: ImmersedSubmanifold, sol: NeumannSolution,
                          normal_samples: int = 16) -> LemmaReport:
    """Positive part of ``Delta u - <H, y> - n f^(1/(n-1)) [+ 2 n b1]`` over
    vertices of ``Omega`` and normal vectors with ``|Du|^2 + |y|^2 <= 1``."""
    n, m = sub.n, sub.m
    vg = sub.vertex_geometry
    Y = normal_disk_samples(m, normal_samples)
    per = np.zeros(sub.mesh.n_vertices)
    idx = np.nonzero(sol.omega_mask)[0]
    for v in idx:
        nb = normal_basis(vg, v)
        rho = math.sqrt(max(0.0, 1.0 - sol.grad_norm[v] ** 2))
        Hn = nb @ vg.G[v] @ vg.H[v]                       # normal components of H
        pair = rho * (Y @ Hn)
        worst = sol.laplacian[v] - np.min(pair)
        bound = n * sol.f[v] ** (1.0 / (n - 1)) - 2 * n * sol.b1
        per[v] = max(0.0, worst - bound)
    A = sub.mesh.vertex_adjacency
    near = (A @ sub.mesh.boundary_mask.astype(float)) > 0
    deep = sol.omega_mask & ~near
    return LemmaReport(
        float(per[idx].max()) if idx.size else 0.0,
        float(per[deep].max()) if np.any(deep) else 0.0,
        int(idx.size), int(normal_samples), float(sub.mesh.h), per,
    )


# --------------------------------------------------------------------------
# functionals


def sobolev_constant(n: int, m: int) -> float:
    """``((n+m)|B^(n+m)| / (m |B^m|))^(1/n)``."""
    return ((n + m) * unit_ball_volume(n + m) / (m * unit_ball_volume(m))) ** (1.0 / n)


def asymptotic_factor(n: int, m: int, b0: float, b1: float, r0: float) -> float:
    return ((1 + b0) / math.exp(2 * r0 * b1 + b0)) ** ((n + m - 1) / n)


def functional_lhs(sub: ImmersedSubmanifold, f, mode: str = "theorem1", b1: float = 0.0) -> dict:
    fv = np.asarray(f(sub.mesh.vertices) if callable(f) else f, float)
    _check_f(fv)
    p = functional_parts(sub, fv)
    extra = 2 * sub.n * b1 * p.mass if mode == "theorem2" else 0.0
    return {"total": p.boundary + p.gradient + extra, "boundary": p.boundary,
            "gradient": p.gradient, "asymptotic_mass": extra}


def functional_rhs(sub: ImmersedSubmanifold, f, theta: float, mode: str = "theorem1",
                   b0: float = 0.0, b1: float = 0.0, r0: float = 0.0) -> dict:
    n, m = sub.n, sub.m
    if m < 2:
        raise BadCodimension(f"codimension m = {m}; the inequality requires m >= 2")
    if not theta > 0:
        raise ValueError("theta must be positive")
    fv = np.asarray(f(sub.mesh.vertices) if callable(f) else f, float)
    _check_f(fv)
    p = functional_parts(sub, fv)
    const = sobolev_constant(n, m)
    fac = asymptotic_factor(n, m, b0, b1, r0) if mode == "theorem2" else 1.0
    norm = p.power ** ((n - 1) / n)
    total = n * const * theta ** (1.0 / n) * fac * norm
    return {"total": total, "constant": const, "theta_factor": theta ** (1.0 / n),
            "asymptotic_factor": fac, "f_norm": norm}


def isoperimetric_sides(sub: ImmersedSubmanifold, theta: float, mode: str = "theorem1",
                        b0: float = 0.0, b1: float = 0.0, r0: float = 0.0,
                        tol: float = TAU_MINIMAL) -> dict:
    """Both sides of the isoperimetric corollaries for a minimal surface."""
    n, m = sub.n, sub.m
    if m < 2:
        raise BadCodimension(f"codimension m = {m}; the inequality requires m >= 2")
    hmax = float(np.max(sub.vertex_geometry.H_norm))
    if not sub.immersion.minimal or hmax > tol:
        raise NotMinimal(f"max |H| = {hmax:.3e} exceeds {tol:.0e}")
    A, L = sub.area, sub.boundary_length
    const = sobolev_constant(n, m)
    fac = asymptotic_factor(n, m, b0, b1, r0) if mode == "theorem2" else 1.0
    bracket = const * theta ** (1.0 / n) * fac - (2 * b1 * A ** (1.0 / n) if mode == "theorem2" else 0.0)
    rhs = n * A ** ((n - 1) / n) * bracket
    return {"lhs": L, "rhs": rhs, "area": A, "bracket": bracket, "constant": const,
            "asymptotic_factor": fac, "max_H": hmax, "vacuous": bool(bracket <= 0)}
