"""Decay profiles and the scalar comparison ODEs.

All second-order problems here have the form ``y'' = c(t) y`` with a
nonnegative coefficient and are integrated with classical fixed-step RK4.
Every trajectory carries a Richardson estimate of its global error obtained
from a second solve at half the step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, interpolate

from .errors import (
    DivergentIntegral,
    EnvelopeViolated,
    GridTooShort,
    NegativeLambda,
    NonPositiveTrajectory,
    UnconvergedODE,
)

TAU_ODE = 1e-8
TAU_QUAD = 1e-8

PROFILE_KINDS = ("zero", "power", "exp")
# test-only kinds; they have no finite b0/b1
_SELFTEST_KINDS = ("const",)


@dataclass(frozen=True)
class AsymptoticProfile:
    """Nonincreasing decay function ``lambda`` on ``[0, inf)``.

    ``kind`` is one of ``zero``, ``power`` (``lambda0 * (1+s)**-p``) or
    ``exp`` (``lambda0 * exp(-s)``).  The kind ``const`` exists only so the
    integrators can be checked against closed forms; it has no finite
    ``b0``/``b1``.
    """

    kind: str = "zero"
    lambda0: float = 0.0
    p: float = 3.0
    s_max: float = 1e3
    tol: float = TAU_QUAD

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS + _SELFTEST_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.lambda0 < 0:
            raise NegativeLambda(f"lambda0 = {self.lambda0} < 0")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.lambda0 == 0.0

    def __call__(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        if self.is_zero:
            return np.zeros_like(s)
        if self.kind == "power":
            return self.lambda0 * (1.0 + s) ** (-self.p)
        if self.kind == "exp":
            return self.lambda0 * np.exp(-s)
        return np.full_like(s, self.lambda0)

    @cached_property
    def b0_b1(self) -> tuple[float, float]:
        return compute_b0_b1(self)

    @property
    def b0(self) -> float:
        return self.b0_b1[0]

    @property
    def b1(self) -> float:
        return self.b0_b1[1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda0": self.lambda0, "p": self.p}


def profile_from_spec(spec: dict | None) -> AsymptoticProfile:
    """Build a registry profile from ``{kind, lambda0, p}``; validates b0/b1."""
    if spec is None:
        return AsymptoticProfile()
    kind = spec.get("kind", "zero")
    if kind not in PROFILE_KINDS:
        raise ValueError(f"profile kind must be one of {PROFILE_KINDS}, got {kind!r}")
    prof = AsymptoticProfile(kind, float(spec.get("lambda0", 0.0)), float(spec.get("p", 3.0)))
    prof.b0_b1  # precheck: raises DivergentIntegral for p <= 2
    return prof


def _tails(profile: AsymptoticProfile, S: float) -> tuple[float, float]:
    """Exact integrals of s*lambda and lambda over [S, inf)."""
    l0, p = profile.lambda0, profile.p
    if profile.kind == "power":
        t1 = l0 * (1.0 + S) ** (1.0 - p) / (p - 1.0)
        t0 = l0 * ((1.0 + S) ** (2.0 - p) / (p - 2.0) - (1.0 + S) ** (1.0 - p) / (p - 1.0))
        return t0, t1
    return l0 * (S + 1.0) * np.exp(-S), l0 * np.exp(-S)


def compute_b0_b1(profile: AsymptoticProfile) -> tuple[float, float]:
    """Return ``(b0, b1) = (int s*lambda, int lambda)`` over ``[0, inf)``.

    Adaptive quadrature on ``[0, s_max]`` plus the closed-form tail.
    """
    if profile.is_zero:
        return 0.0, 0.0
    if profile.kind == "const" or (profile.kind == "power" and profile.p <= 2.0):
        raise DivergentIntegral(
            f"profile {profile.kind} (p={profile.p}) has divergent b0"
        )
    S = profile.s_max
    # split points keep quad's subintervals well scaled for slowly decaying tails
    pts = [0.0, 1.0, 10.0, 100.0, S] if S > 100 else [0.0, S]
    b0 = b1 = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        b0 += integrate.quad(lambda s: s * profile(s), lo, hi, epsrel=profile.tol, epsabs=0, limit=200)[0]
        b1 += integrate.quad(profile, lo, hi, epsrel=profile.tol, epsabs=0, limit=200)[0]
    t0, t1 = _tails(profile, S)
    return float(b0 + t0), float(b1 + t1)


# --------------------------------------------------------------------------
# RK4


def rk4(rhs: Callable, y0, T: float, dt: float, t0: float = 0.0):
    """Classical fixed-step RK4 for ``y' = rhs(t, y)``.

    The step is shrunk slightly if needed so the grid ends exactly at ``T``.
    Returns ``(grid, ys)`` with ``ys[k]`` the state at ``grid[k]``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.asarray(y0, dtype=float)
    nsteps = int(np.ceil(T / dt - 1e-9)) if T > 0 else 0
    h = T / nsteps if nsteps else dt
    grid = t0 + h * np.arange(nsteps + 1)
    ys = np.empty((nsteps + 1,) + y.shape)
    ys[0] = y
    for k in range(nsteps):
        t = grid[k]
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys[k + 1] = y
    return grid, ys


@dataclass(frozen=True)
class ODETrajectory:
    """Samples of a scalar second-order solution on a uniform grid."""

    grid: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    step: float
    richardson_error: float = 0.0
    tol: float = TAU_ODE

    @property
    def converged(self) -> bool:
        return self.richardson_error <= self.tol

    @cached_property
    def dense(self) -> interpolate.CubicHermiteSpline:
        return interpolate.CubicHermiteSpline(self.grid, self.values, self.derivs)

    def __call__(self, t):
        return self.dense(t)


def _second_order(coeff, ic, T, dt):
    y0, yp0 = ic

    def rhs(t, y):
        return np.array([y[1], coeff(t) * y[0]])

    grid, ys = rk4(rhs, [y0, yp0], T, dt)
    return grid, ys[:, 0], ys[:, 1]


def solve_linear_second_order(
    coeff: Callable[[float], float],
    ic: tuple[float, float],
    T: float,
    dt: float,
    tol: float = TAU_ODE,
    check: bool = True,
) -> ODETrajectory:
    """RK4 solution of ``y'' = coeff(t) * y`` with ``(y(0), y'(0)) = ic``."""
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    grid, y, yp = _second_order(coeff, ic, T, dt)
    if check and len(grid) > 1:
        tt = np.linspace(0.0, T, 2 * len(grid) - 1)
        if np.min([coeff(t) for t in tt]) < 0:
            raise ValueError("coefficient must be nonnegative on [0, T]")
    err = 0.0
    if len(grid) > 1:
        g2, y2, _ = _second_order(coeff, ic, T, (grid[1] - grid[0]) / 2.0)
        diff = np.max(np.abs(y - y2[::2]))
        err = float(diff * 16.0 / 15.0 / max(np.max(np.abs(y2)), 1e-300))
    step = grid[1] - grid[0] if len(grid) > 1 else dt
    traj = ODETrajectory(grid, y, yp, step, err, tol)
    if check and not traj.converged:
        raise UnconvergedODE(
            f"Richardson error {err:.3e} exceeds tolerance {tol:.1e}; reduce dt"
        )
    return traj


def solve_h(profile: AsymptoticProfile, T: float, dt: float, tol: float = TAU_ODE) -> ODETrajectory:
    """Comparison function: ``h'' = lambda(t) h``, ``h(0)=0``, ``h'(0)=1``."""
    if T <= 0 or dt <= 0:
        raise ValueError("need T > 0 and dt > 0")
    if profile.is_zero:
        grid = np.linspace(0.0, T, int(np.ceil(T / dt - 1e-9)) + 1)
        return ODETrajectory(grid, grid.copy(), np.ones_like(grid), grid[1] - grid[0], 0.0, tol)
    return solve_linear_second_order(lambda t: float(profile(t)), (0.0, 1.0), T, dt, tol)


class WarpFunction:
    """C^2 interpolant of the comparison function ``h`` for use inside metrics.

    Quintic Hermite pieces built from ``h``, ``h'`` and ``h'' = lambda h``.
    Beyond the tabulated range ``h`` is continued linearly.
    """

    def __init__(self, profile: AsymptoticProfile, r_max: float, dt: float = 2e-3):
        self.profile = profile
        self.traj = solve_h(profile, r_max, dt)
        g = self.traj.grid
        h, hp = self.traj.values, self.traj.derivs
        hpp = profile(g) * h
        self._poly = interpolate.BPoly.from_derivatives(g, np.stack([h, hp, hpp], axis=1))
        self.r_max = g[-1]

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        inside = np.minimum(r, self.r_max)
        val = self._poly(inside)
        hp_end = self.traj.derivs[-1]
        return np.where(r > self.r_max, self.traj.values[-1] + hp_end * (r - self.r_max), val)

    def ratio(self, r):
        """``h(r)/r`` with the removable singularity at 0 filled in."""
        r = np.asarray(r, dtype=float)
        small = r < 1e-3
        lam0 = float(self.profile(0.0))
        rs = np.where(small, 1.0, r)
        return np.where(small, 1.0 + lam0 * r**2 / 6.0, self(rs) / rs)


# --------------------------------------------------------------------------
# comparison diagnostics


@dataclass
class EnvelopeReport:
    grid: np.ndarray
    slack_psi1: np.ndarray
    slack_psi_tilde: np.ndarray
    slack_ratio: np.ndarray
    slack_lambda: np.ndarray
    slack_tau_lambda: np.ndarray
    tol: float = TAU_ODE

    @property
    def min_slacks(self) -> dict:
        out = {}
        for name in ("psi1", "psi_tilde", "ratio", "lambda", "tau_lambda"):
            arr = getattr(self, "slack_" + name)
            out[name] = float(np.min(arr)) if arr.size else 0.0
        return out

    @property
    def ok(self) -> bool:
        return all(v >= -self.tol for v in self.min_slacks.values())


def _cumint(grid, y):
    if len(grid) < 2:
        return np.zeros_like(y)
    if len(grid) < 3:
        return integrate.cumulative_trapezoid(y, grid, initial=0.0)
    return integrate.cumulative_simpson(y, x=grid, initial=0.0)


def envelope_check(
    psi1: ODETrajectory,
    psi2: ODETrajectory,
    psi_tilde: ODETrajectory,
    lam: np.ndarray,
    c_tan: float,
    c_nor: float,
    b0: float,
    b1: float,
    r0: float,
    tol: float = TAU_ODE,
    strict: bool = False,
) -> EnvelopeReport:
    """Slacks of the exponential envelopes for the comparison solutions.

    ``lam`` holds the decay profile sampled along the ray on the common grid;
    ``c_tan``/``c_nor`` are the factors ``(n - cos^2 s)/n`` and
    ``(m - sin^2 s)/m``.  Slacks are ``bound - value`` and are reported
    relative to ``max(1, |bound|)``.
    """
    t = psi1.grid
    if not (np.array_equal(t, psi2.grid) and np.array_equal(t, psi_tilde.grid)):
        raise ValueError("trajectories must share a grid")
    lam = np.asarray(lam, dtype=float)
    I_lam = _cumint(t, lam)
    I_tlam = _cumint(t, t * lam)

    def rel(bound, val):
        return (bound - val) / np.maximum(1.0, np.abs(bound))

    s1 = rel(t * np.exp(c_tan * I_tlam), psi1.values)
    s2 = rel(t * np.exp(c_nor * I_tlam), psi_tilde.values)
    ratio_slack = np.zeros_like(t)
    pos = t > 0
    if np.any(pos):
        tp = t[pos]
        # t = 0 is the removable 1/t singularity; its slack stays 0
        ratio = psi2.values[pos] / psi1.values[pos]
        ratio_slack[pos] = rel(c_tan * I_lam[pos] + 1.0 / tp, ratio)
    s4 = rel(np.full_like(t, 2.0 * b1), I_lam)
    s5 = rel(np.full_like(t, 2.0 * r0 * b1 + b0), I_tlam)
    rep = EnvelopeReport(t, s1, s2, ratio_slack, s4, s5, tol)
    if strict and not rep.ok:
        raise EnvelopeViolated(f"envelope slack below -{tol}: {rep.min_slacks}")
    return rep


def log_derivative_comparison(phi: ODETrajectory, psi: ODETrajectory) -> np.ndarray:
    """Per-sample slack ``psi'/psi - phi'/phi`` on the positive part of the grid.

    Both trajectories must be positive on ``(0, T]``; the value at ``t = 0``
    is included when both are positive there.
    """
    if not np.array_equal(phi.grid, psi.grid):
        raise ValueError("trajectories must share a grid")
    t = phi.grid
    interior = t > 0
    if np.any(phi.values[interior] <= 0) or np.any(psi.values[interior] <= 0):
        raise NonPositiveTrajectory("trajectory not positive on (0, T]")
    use = (phi.values > 0) & (psi.values > 0)
    out = np.full_like(t, np.nan)
    out[use] = psi.derivs[use] / psi.values[use] - phi.derivs[use] / phi.values[use]
    return out


def _gauss_integral(dense, a: float, b: float, power: int, grid: np.ndarray) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(6)
    edges = np.concatenate([[a], grid[(grid > a) & (grid < b)], [b]])
    lo, hi = edges[:-1], edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    x = mid[:, None] + half[:, None] * nodes[None, :]
    return float(np.sum(half[:, None] * weights[None, :] * dense(x) ** power))


def theta_h_normalizer(h: ODETrajectory, dim: int, r: float) -> float:
    """``dim * |B^dim| * int_0^r h^(dim-1)``: the model-ball volume for ``h``."""
    from .geometry import unit_ball_volume

    if r < 0:
        raise ValueError("r must be nonnegative")
    if r > h.grid[-1] * (1 + 1e-12):
        raise GridTooShort(f"r = {r} beyond trajectory end {h.grid[-1]}")
    if r == 0:
        return 0.0
    integral = _gauss_integral(h.dense, 0.0, r, dim - 1, h.grid)
    return dim * unit_ball_volume(dim) * integral
