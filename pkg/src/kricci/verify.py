"""End-to-end evaluation of the Sobolev and isoperimetric inequalities."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import KRicciError
from .geometry import chart_distance, curvature_packet, min_ric_k_sample
from .scenario import Scenario
from .submanifold import (
    build_immersion,
    functional_lhs,
    functional_rhs,
    isoperimetric_sides,
    lemma_pointwise_check,
    make_density,
    normal_basis,
    normal_disk_samples,
    solve_neumann,
)
from .transport import (
    TAU_CURV,
    TAU_DET,
    TAU_RES,
    avr_estimate,
    comparison_along_ray,
    det_bound_check,
    evolve_jacobi,
    log_det_derivative_slack,
    make_ray,
    partial_traces_S,
    riccati_trace_residual,
)

TAU_JACOBI = 1e-6
TAU_SYM = 1e-6

EXIT_PASS, EXIT_USAGE, EXIT_INEQUALITY, EXIT_SUBCHECK = 0, 1, 2, 3

# which statement each check stands for; printed by the text report
CHECK_MAP = {
    "curvature_hypothesis": "sampled k-Ricci lower bound on the ambient chart",
    "neumann_solver": "Neumann problem solved with exact discrete compatibility",
    "lemma_bound": "pointwise bound Delta u - <H, y> <= n f^(1/(n-1)) [- 2 n b1] on Omega",
    "geodesic_conservation": "constant speed and orthonormal parallel frames",
    "jacobi_residual": "Jacobi equation P'' = -P S",
    "symmetry": "symmetry of P' P^T and Q",
    "riccati_traces": "partial-trace Riccati inequalities",
    "curvature_traces": "partial traces of S bounded below",
    "log_det_bound": "log-derivative bound on det P",
    "det_bound": "determinant comparison bound",
    "lemma_form_det_bound": "determinant bound in terms of f",
    "comparison_chain": "scalar comparison functions, envelopes and det P <= psi^n psi~^m",
    "inequality": "functional inequality LHS >= RHS within tolerance",
}


class _StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(str(exc))
        self.stage = stage
        self.exc = exc


@dataclass
class InequalityReport:
    command: str
    scenario: str
    mode: str
    sections: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    verdict: str = "incomplete"
    exit_code: int = EXIT_SUBCHECK
    failed_stage: str | None = None
    error: str | None = None

    @property
    def ratio(self):
        return self.sections.get("inequality", {}).get("ratio")

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "scenario": self.scenario,
            "mode": self.mode,
            "verdict": self.verdict,
            "exit_code": self.exit_code,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "checks": dict(self.checks),
            **{k: v for k, v in self.sections.items()},
        }

    def scalars(self) -> dict:
        """Flat ``section.key -> number`` table of every numeric leaf."""
        out = {}

        def walk(prefix, obj):
            if isinstance(obj, dict):
                for k, v in obj.items():
                    walk(f"{prefix}.{k}" if prefix else str(k), v)
            elif isinstance(obj, bool):
                out[prefix] = obj
            elif isinstance(obj, (int, float)) and obj is not None:
                out[prefix] = obj

        walk("", self.to_dict())
        return out


def _clean(obj):
    """Convert numpy scalars and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _stage(report, name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (KRicciError, ValueError, np.linalg.LinAlgError) as exc:
        raise _StageError(name, exc) from exc


def _fail(report: InequalityReport, err: _StageError) -> InequalityReport:
    report.failed_stage = err.stage
    report.error = f"{type(err.exc).__name__}: {err.exc}"
    report.verdict = "error"
    report.exit_code = EXIT_SUBCHECK
    report.sections = _clean(report.sections)
    return report


def _provenance(sc: Scenario, sub=None) -> dict:
    prov = {
        "config_hash": sc.config_hash,
        "package_version": __version__,
        "seeds": {s: sc.section(s)["seed"] for s in ("rays", "avr", "curvature_audit")},
        "threads": os.environ.get("KRICCI_THREADS", "1"),
    }
    if sub is not None:
        prov["mesh"] = {"vertices": int(sub.mesh.n_vertices), "triangles": int(len(sub.mesh.triangles)),
                        "boundary_edges": int(len(sub.mesh.boundary_edges)), "h": float(sub.mesh.h),
                        "refinement": int(sub.refinement)}
    return prov


# --------------------------------------------------------------------------
# stages


def curvature_audit(sc: Scenario) -> dict:
    cfg = sc.section("curvature_audit")
    asym = sc.section("chart")["hypothesis"] == "asymptotic"
    val = min_ric_k_sample(
        sc.chart, sc.k, cfg["n_points"], cfg["n_frames"], cfg["seed"],
        profile=sc.profile if asym else None, base_point=sc.base_point,
        distance_mode=sc.config["distance"],
    )
    tol = sc.section("tolerances")["curvature"]
    return {"k": sc.k, "hypothesis": sc.section("chart")["hypothesis"],
            "quantity": "min(ric_k + lambda(d(o, x)))" if asym else "min ric_k",
            "min_value": float(val), "tolerance": tol, "ok": bool(val >= -tol)}


def _symmetry_sample(sc: Scenario) -> float:
    cfg = sc.section("curvature_audit")
    rng = np.random.default_rng(cfg["seed"])
    lo, hi = sc.chart.lower, sc.chart.upper
    span = hi - lo
    pts = lo + 0.25 * span + 0.5 * span * rng.random((cfg["n_points"], sc.chart.dim))
    return max(curvature_packet(sc.chart, p).symmetry_residual() for p in pts)


def asymptotic_constants(sc: Scenario, sub) -> dict:
    b0, b1 = sc.profile.b0_b1
    mode = sc.config["distance"]
    r0 = sub.r0(sc.base_point, mode)
    out = {"b0": b0, "b1": b1, "r0": r0, "distance_mode": mode}
    if sc.chart.distance_fn is not None:
        try:
            other = "exact" if mode == "surrogate" else "surrogate"
            out["r0_" + other] = sub.r0(sc.base_point, other)
            out["r0_mode_difference"] = abs(out["r0_" + other] - r0)
        except ValueError:
            pass
    return out


def _ray_inputs(sub, sol, v, y_unit):
    vg = sub.vertex_geometry
    nb = normal_basis(vg, v)
    rho = math.sqrt(max(0.0, 1.0 - sol.grad_norm[v] ** 2))
    y = rho * (y_unit @ nb)
    Du = sol.grad_vector(sub, v)
    C = vg.pullback()[v]
    Hc = C.T @ sol.hess_param[v] @ C
    IIc = np.einsum("ai,abk,bj->kij", C, vg.II[v], C)
    return vg.x[v], Du, y, vg.dF[v], nb, Hc, IIc


def audit_rays(sc: Scenario, sub, sol, asym: dict | None, lemma_tol: float, collect: bool = False):
    """Run the transport checks on rays drawn from the set U."""
    cfg = sc.section("rays")
    tol_cons = sc.section("tolerances")["conservation"]
    omega = np.nonzero(sol.omega_mask)[0]
    count = min(int(cfg["count"]), len(omega))
    summary = {"n_rays": count, "horizon": cfg["horizon"], "step": cfg["step"]}
    if count == 0 or cfg["horizon"] == 0:
        summary["note"] = "no samples"
        return summary, {}, []
    rng = np.random.default_rng(cfg["seed"])
    verts = rng.choice(omega, size=count, replace=False)
    Y = normal_disk_samples(sc.m, count)
    theorem2 = sc.mode == "theorem2"
    n, m = sc.n, sc.m
    agg = {
        "det_bound_min_rel_slack": np.inf, "lemma_form_min_rel_slack": np.inf,
        "riccati_max_residual": -np.inf, "jacobi_max_residual": 0.0,
        "symmetry_max_residual": 0.0, "speed_max_drift": 0.0, "frame_max_drift": 0.0,
        "trace_min_slack": np.inf, "log_det_min_slack": np.inf, "n_conjugate": 0, "n_exited": 0,
    }
    comp_min: dict = {}
    tables = []
    for i, v in enumerate(verts):
        x, Du, y, span_t, span_n, Hc, IIc = _ray_inputs(sub, sol, int(v), Y[i])
        ray = make_ray(sc.chart, x, Du, y, span_t, span_n, cfg["horizon"], cfg["step"])
        system = evolve_jacobi(sc.chart, ray, Hc, IIc, basis="chart")
        fx = float(sol.f[v])
        if theorem2:
            db = det_bound_check(system, fx, "asymptotic", asym["b0"], asym["b1"], asym["r0"], lemma_tol)
        else:
            db = det_bound_check(system, fx, "nonnegative", lemma_tol=lemma_tol)
        rr = riccati_trace_residual(system)
        a1, a2 = system.symmetry_residual()
        G = sc.chart.g(system.x)
        speed = np.sqrt(np.einsum("ta,tab,tb->t", system.v, G, system.v))
        drift = float(np.max(np.abs(speed - speed[0])) / max(speed[0], 1e-300)) if ray.speed_a > 0 else 0.0
        gram = system.frame @ G @ np.swapaxes(system.frame, 1, 2)
        fdrift = float(np.max(np.abs(gram - np.eye(sc.chart.dim))))
        agg["det_bound_min_rel_slack"] = min(agg["det_bound_min_rel_slack"], db.min_rel_slack)
        agg["lemma_form_min_rel_slack"] = min(agg["lemma_form_min_rel_slack"], db.min_rel_lemma_slack)
        agg["riccati_max_residual"] = max(agg["riccati_max_residual"], rr.max_residual)
        agg["jacobi_max_residual"] = max(agg["jacobi_max_residual"], system.jacobi_residual())
        agg["symmetry_max_residual"] = max(agg["symmetry_max_residual"], a1, a2)
        agg["speed_max_drift"] = max(agg["speed_max_drift"], drift)
        agg["frame_max_drift"] = max(agg["frame_max_drift"], fdrift)
        agg["n_conjugate"] += int(system.conjugate_time is not None)
        agg["n_exited"] += int(system.exit_time is not None)
        comp = None
        if theorem2:
            comp = comparison_along_ray(system, sc.chart, sc.profile, sc.base_point,
                                        asym["b0"], asym["b1"], asym["r0"], sc.config["distance"])
            for k2, val in comp.summary().items():
                comp_min[k2] = min(comp_min.get(k2, np.inf), val)
            agg["trace_min_slack"] = min(agg["trace_min_slack"], comp.trace_slack)
        else:
            agg["trace_min_slack"] = min(agg["trace_min_slack"], partial_traces_S(system).min_slack)
            agg["log_det_min_slack"] = min(agg["log_det_min_slack"], log_det_derivative_slack(system))
        if collect:
            tables.append(_ray_table(i, int(v), system, db, comp))
    if theorem2:
        agg.pop("log_det_min_slack")
    summary.update({k: (float(val) if isinstance(val, float) else val) for k, val in agg.items()})
    if theorem2:
        summary["comparison"] = {k: float(val) for k, val in comp_min.items()}
    checks = {
        "geodesic_conservation": summary["speed_max_drift"] <= tol_cons and summary["frame_max_drift"] <= tol_cons,
        "jacobi_residual": summary["jacobi_max_residual"] <= TAU_JACOBI,
        "symmetry": summary["symmetry_max_residual"] <= TAU_SYM,
        "riccati_traces": summary["riccati_max_residual"] <= TAU_RES,
        "curvature_traces": summary["trace_min_slack"] >= -TAU_CURV,
        "det_bound": summary["det_bound_min_rel_slack"] >= -TAU_DET,
        "lemma_form_det_bound": summary["lemma_form_min_rel_slack"] >= -TAU_DET,
    }
    if theorem2:
        checks["comparison_chain"] = bool(
            comp_min.get("psi_det_slack", 0) >= -TAU_DET
            and min(comp_min.get("log_slack_tangent", 0), comp_min.get("log_slack_normal", 0)) >= -TAU_RES
            and all(comp_min.get("envelope_" + k, 0) >= -1e-8 for k in ("psi1", "psi_tilde", "ratio", "lambda", "tau_lambda"))
        )
    else:
        checks["log_det_bound"] = summary["log_det_min_slack"] >= -TAU_RES
    return summary, checks, tables


def _ray_table(i, v, system, db, comp):
    n = system.n
    t = system.grid
    keep = system.before_conjugate & (t > 0)
    Q, S = system.Q, system.S
    cols = {
        "t": t[keep],
        "det_P": system.det[keep],
        "bound": db.bound,
        "lemma_bound": db.lemma_bound,
        "slack": db.slack,
        "trace_Q_tangent": np.trace(Q[:, :n, :n], axis1=1, axis2=2)[keep],
        "trace_Q_normal": np.trace(Q[:, n:, n:], axis1=1, axis2=2)[keep],
        "trace_S_tangent": np.trace(S[:, :n, :n], axis1=1, axis2=2)[keep],
        "trace_S_normal": np.trace(S[:, n:, n:], axis1=1, axis2=2)[keep],
    }
    if comp is not None:
        cols["psi"] = comp.psi.values[keep]
        cols["psi_tilde"] = comp.psi_tilde.values[keep]
        cols["psi_det_bound"] = comp.psi.values[keep] ** n * comp.psi_tilde.values[keep] ** system.m
    return {"ray": i, "vertex": v, "speed": system.ray.speed_a, "angle": system.ray.angle_s,
            "conjugate_time": system.conjugate_time, "columns": cols}


def estimate_theta(sc: Scenario) -> dict:
    cfg = sc.section("avr")
    mode = "theta_h" if sc.mode == "theorem2" else "theta"
    res = avr_estimate(sc.chart, sc.base_point, cfg["radius"], cfg["n_dirs"], cfg["seed"],
                       mode=mode, profile=sc.profile, n_steps=cfg["steps"])
    return res.to_dict()


# --------------------------------------------------------------------------
# commands


def _prepare(sc: Scenario, report: InequalityReport, constant_f: bool):
    report.sections["provenance"] = _provenance(sc)
    audit = _stage(report, "curvature_audit", curvature_audit, sc)
    report.sections["curvature_audit"] = audit
    report.checks["curvature_hypothesis"] = audit["ok"]
    im = sc.section("immersion")
    sub = _stage(report, "immersion", build_immersion, sc.chart, im["id"], im["params"], im["refinement"])
    report.sections["provenance"] = _provenance(sc, sub)
    theorem2 = sc.mode == "theorem2"
    asym = _stage(report, "immersion", asymptotic_constants, sc, sub) if theorem2 else None
    if asym is not None:
        report.sections["asymptotic"] = asym
    dens = sc.section("density")
    f = make_density("constant") if constant_f else _stage(report, "density", make_density, dens["kind"], dens["params"])
    sol = _stage(report, "neumann", solve_neumann, sub, f, sc.mode, asym["b1"] if asym else 0.0)
    report.sections["neumann"] = {
        "scale": sol.scale, "pde_residual": sol.pde_residual, "compatibility_gap": sol.compatibility_gap,
        "divergence_gap": sol.divergence_gap, "iterations": sol.iterations,
        "omega_vertices": int(sol.omega_mask.sum()), "interior_vertices": int((~sub.mesh.boundary_mask).sum()),
    }
    report.checks["neumann_solver"] = bool(sol.pde_residual <= 1e-9 and sol.compatibility_gap <= 1e-10)
    lcfg = sc.section("lemma")
    lem = _stage(report, "lemma", lemma_pointwise_check, sub, sol, lcfg["normal_samples"])
    lemma_tol = lcfg["constant"] * sub.mesh.h
    report.sections["lemma"] = {**lem.to_dict(), "tolerance": lemma_tol,
                                "note": "boundary-adjacent vertices included; see max_positive_part_deep"}
    report.checks["lemma_bound"] = bool(lem.max_positive_part <= lemma_tol)
    return sub, f, sol, asym, lemma_tol


def _finish(report: InequalityReport, lhs: float, rhs: float, theta: dict, tau: float, n: int):
    ratio = lhs / rhs if rhs > 0 else math.inf
    tau_eff = tau + theta["stderr"] / (n * theta["estimate"])
    report.sections["inequality"] = {"lhs": lhs, "rhs": rhs, "ratio": ratio,
                                     "tau_ineq": tau, "tau_effective": tau_eff}
    report.checks["inequality"] = bool(ratio >= 1 - tau_eff)
    report.sections = _clean(report.sections)
    sub_ok = all(v for k, v in report.checks.items() if k != "inequality")
    if not report.checks["inequality"]:
        report.verdict, report.exit_code = "fail", EXIT_INEQUALITY
    elif not sub_ok:
        report.verdict, report.exit_code = "fail", EXIT_SUBCHECK
    else:
        report.verdict, report.exit_code = "pass", EXIT_PASS
    report.checks = {k: bool(v) for k, v in report.checks.items()}
    return report


def run_verify(sc: Scenario) -> InequalityReport:
    """Full pipeline for the Sobolev inequality of the scenario's mode."""
    report = InequalityReport("verify", sc.name, sc.mode)
    try:
        sub, f, sol, asym, lemma_tol = _prepare(sc, report, constant_f=False)
        rays, checks, _ = _stage(report, "rays", audit_rays, sc, sub, sol, asym, lemma_tol)
        report.sections["rays"] = rays
        report.checks.update(checks)
        theta = _stage(report, "avr", estimate_theta, sc)
        report.sections["theta"] = theta
        mode = sc.mode
        extra = asym or {"b0": 0.0, "b1": 0.0, "r0": 0.0}
        lhs = _stage(report, "functionals", functional_lhs, sub, f, mode, extra["b1"])
        rhs = _stage(report, "functionals", functional_rhs, sub, f, theta["estimate"], mode,
                     extra["b0"], extra["b1"], extra["r0"])
        report.sections["lhs"] = lhs
        report.sections["rhs"] = rhs
    except _StageError as err:
        return _fail(report, err)
    return _finish(report, lhs["total"], rhs["total"], theta, sc.section("tolerances")["ineq"], sc.n)


def run_isoperimetric(sc: Scenario) -> InequalityReport:
    """Isoperimetric corollaries: ``f = 1`` on a minimal surface."""
    report = InequalityReport("isoperimetric", sc.name, sc.mode)
    try:
        sub, f, sol, asym, lemma_tol = _prepare(sc, report, constant_f=True)
        rays, checks, _ = _stage(report, "rays", audit_rays, sc, sub, sol, asym, lemma_tol)
        report.sections["rays"] = rays
        report.checks.update(checks)
        theta = _stage(report, "avr", estimate_theta, sc)
        report.sections["theta"] = theta
        extra = asym or {"b0": 0.0, "b1": 0.0, "r0": 0.0}
        iso = _stage(report, "functionals", isoperimetric_sides, sub, theta["estimate"], sc.mode,
                     extra["b0"], extra["b1"], extra["r0"])
        report.sections["isoperimetric"] = iso
        if iso["vacuous"]:
            report.sections["isoperimetric"]["flag"] = "vacuous bound"
    except _StageError as err:
        return _fail(report, err)
    if iso["rhs"] <= 0:
        report.sections["inequality"] = {"lhs": iso["lhs"], "rhs": iso["rhs"], "ratio": None,
                                         "tau_ineq": sc.section("tolerances")["ineq"], "tau_effective": None}
        report.checks["inequality"] = True
        report.sections = _clean(report.sections)
        ok = all(report.checks.values())
        report.verdict, report.exit_code = ("pass", EXIT_PASS) if ok else ("fail", EXIT_SUBCHECK)
        return report
    return _finish(report, iso["lhs"], iso["rhs"], theta, sc.section("tolerances")["ineq"], sc.n)


def run_ray_audit(sc: Scenario):
    """Transport diagnostics per ray; returns the report and per-ray tables."""
    report = InequalityReport("ray-audit", sc.name, sc.mode)
    tables = []
    try:
        sub, f, sol, asym, lemma_tol = _prepare(sc, report, constant_f=False)
        rays, checks, tables = _stage(report, "rays", audit_rays, sc, sub, sol, asym, lemma_tol, collect=True)
        report.sections["rays"] = rays
        report.checks.update(checks)
    except _StageError as err:
        return _fail(report, err), tables
    report.sections = _clean(report.sections)
    ok = all(report.checks.values())
    report.verdict, report.exit_code = ("pass", EXIT_PASS) if ok else ("fail", EXIT_SUBCHECK)
    return report, tables


def run_avr(sc: Scenario) -> InequalityReport:
    report = InequalityReport("avr", sc.name, sc.mode)
    report.sections["provenance"] = _provenance(sc)
    try:
        report.sections["theta"] = _stage(report, "avr", estimate_theta, sc)
    except _StageError as err:
        return _fail(report, err)
    report.sections = _clean(report.sections)
    report.verdict, report.exit_code = "pass", EXIT_PASS
    return report


def run_curvature_audit(sc: Scenario) -> InequalityReport:
    report = InequalityReport("curvature-audit", sc.name, sc.mode)
    report.sections["provenance"] = _provenance(sc)
    try:
        audit = _stage(report, "curvature_audit", curvature_audit, sc)
        audit["max_symmetry_residual"] = _stage(report, "curvature_audit", _symmetry_sample, sc)
        audit["symmetry_tolerance"] = sc.chart.tau_sym
        report.sections["curvature_audit"] = audit
        report.checks["curvature_hypothesis"] = audit["ok"]
        report.checks["symmetry"] = audit["max_symmetry_residual"] <= sc.chart.tau_sym
    except _StageError as err:
        return _fail(report, err)
    report.sections = _clean(report.sections)
    ok = all(report.checks.values())
    report.checks = {k: bool(v) for k, v in report.checks.items()}
    report.verdict, report.exit_code = ("pass", EXIT_PASS) if ok else ("fail", EXIT_SUBCHECK)
    return report
