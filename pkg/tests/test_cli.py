import csv
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import ROOT, SCENARIOS
from kricci.cli import main
from kricci.errors import BadCodimension, DivergentIntegral, RegistryMiss, SchemaError
from kricci.geometry import make_chart
from kricci.report import (
    csv_to_scalars,
    emit_report,
    headline,
    report_from_json,
    scalar_table,
    to_csv,
    to_json,
    to_text,
    write_ray_tables,
)
from kricci.scenario import SCHEMA, load_config, parse_config, scenario_from_dict
from kricci.transport import det_bound_check, evolve_jacobi, make_ray
from kricci.verify import (
    InequalityReport,
    _finish,
    _ray_table,
    run_avr,
    run_curvature_audit,
    run_isoperimetric,
    run_ray_audit,
    run_verify,
)

# small but complete pipeline, a few seconds per run
QUICK = {
    "name": "quick_disk",
    "chart": {"id": "euclidean", "params": {"dim": 4}},
    "immersion": {"id": "flat_disk", "refinement": 2},
    "rays": {"count": 3, "horizon": 1.0, "step": 0.02},
    "avr": {"radius": 2.0, "n_dirs": 100, "steps": 20},
    "curvature_audit": {"n_points": 4, "n_frames": 2},
}


def _quick(**changes):
    cfg = json.loads(json.dumps(QUICK))
    for k, v in changes.items():
        cfg[k] = v
    return cfg


@pytest.fixture
def quick_file(tmp_path):
    def write(cfg=None, name="quick.json"):
        path = tmp_path / name
        path.write_text(json.dumps(cfg or QUICK), encoding="utf-8")
        return str(path)
    return write


# config parsing -------------------------------------------------------------------

def test_minimal_config():
    sc = parse_config('{"name": "d", "chart": {"id": "euclidean", "params": {"dim": 4}}, '
                      '"immersion": {"id": "flat_disk"}}')
    assert (sc.n, sc.m, sc.k) == (2, 2, 1)
    assert sc.mode == "theorem1"
    assert sc.section("tolerances")["ineq"] == 0.03
    assert sc.base_point == [0.0] * 4


def test_codimension_one_rejected():
    cfg = _quick(chart={"id": "euclidean", "params": {"dim": 3}})
    with pytest.raises(BadCodimension):
        scenario_from_dict(cfg)
    assert scenario_from_dict(cfg, require_codim=False).m == 1


def test_divergent_profile_at_parse_time():
    cfg = _quick(mode="theorem2", profile={"kind": "power", "lambda0": 1.0, "p": 2.0})
    with pytest.raises(DivergentIntegral):
        scenario_from_dict(cfg)


@pytest.mark.parametrize("patch,path", [
    ({"colour": "red"}, "/"),
    ({"rays": {"count": -1}}, "/rays/count"),
    ({"immersion": {"id": "flat_disk", "refinement": 2, "extra": 1}}, "/immersion"),
    ({"chart": {"id": "euclidean", "params": {"dim": 4}, "base_point": [0, 0]}}, "/chart/base_point"),
])
def test_schema_errors_carry_path(patch, path):
    cfg = _quick(**patch)
    with pytest.raises(SchemaError) as exc:
        scenario_from_dict(cfg)
    assert str(exc.value).startswith(path + ":")


def test_bad_json():
    with pytest.raises(SchemaError):
        parse_config("{not json")
    with pytest.raises(SchemaError):
        parse_config("[1, 2]")


@pytest.mark.parametrize("patch", [
    {"chart": {"id": "klein_bottle"}},
    {"immersion": {"id": "torus"}},
    {"density": {"kind": "spiky"}},
])
def test_unknown_registry_ids(patch):
    with pytest.raises(RegistryMiss):
        scenario_from_dict(_quick(**patch))


def test_published_schema_in_sync():
    with open(ROOT / "schema" / "scenario.schema.json", encoding="utf-8") as fh:
        assert json.load(fh) == json.loads(json.dumps(SCHEMA))


def test_overrides():
    sc = scenario_from_dict(QUICK)
    sc2 = sc.with_overrides(seed=9, refine=3)
    assert sc2.section("rays")["seed"] == 9 and sc2.section("avr")["seed"] == 9
    assert sc2.section("immersion")["refinement"] == 3
    assert sc2.config_hash != sc.config_hash
    assert sc.section("rays")["seed"] == 0


# pipelines ------------------------------------------------------------------------

SCENARIO_FILES = sorted(p.name for p in SCENARIOS.glob("*.json"))


@pytest.mark.slow
@pytest.mark.parametrize("name", SCENARIO_FILES)
def test_registered_scenarios_pass(name):
    sc = load_config(SCENARIOS / name)
    run = run_isoperimetric if sc.section("immersion")["id"] == "flat_annulus" else run_verify
    rep = run(sc)
    assert rep.verdict == "pass", (rep.checks, rep.error)
    assert rep.exit_code == 0
    assert rep.ratio >= 1 - sc.section("tolerances")["ineq"]
    assert all(rep.checks.values())


def test_quick_verify_report_shape():
    rep = run_verify(scenario_from_dict(QUICK))
    assert rep.exit_code == 0
    d = rep.to_dict()
    for key in ("provenance", "curvature_audit", "neumann", "lemma", "rays", "theta", "lhs", "rhs", "inequality"):
        assert key in d
    assert d["provenance"]["mesh"]["refinement"] == 2
    assert set(rep.checks) <= set(json.loads(to_json(rep))["checks"])


def test_partial_report_marks_stage():
    cfg = _quick(chart={"id": "stereographic_sphere", "params": {"dim": 4}},
                 immersion={"id": "flat_disk", "params": {"radius": 0.3}, "refinement": 2},
                 avr={"radius": 5.0, "n_dirs": 100, "steps": 20})
    rep = run_verify(scenario_from_dict(cfg))
    assert rep.failed_stage == "avr"
    assert rep.exit_code == 3 and rep.verdict == "error"
    assert "RadiusExceedsChart" in rep.error
    assert "!! stage failed: avr" in to_text(rep)
    assert headline(rep).startswith("ERROR stage=avr")
    # completed stages are kept
    assert "lemma" in rep.to_dict()


def test_vacuous_isoperimetric():
    cfg = _quick(mode="theorem2", profile={"kind": "exp", "lambda0": 3.0},
                 chart={"id": "euclidean", "params": {"dim": 4}, "hypothesis": "asymptotic"})
    rep = run_isoperimetric(scenario_from_dict(cfg))
    iso = rep.to_dict()["isoperimetric"]
    assert iso["vacuous"] and iso["flag"] == "vacuous bound"
    assert iso["rhs"] < 0
    assert rep.exit_code == 0 and rep.ratio is None


def test_ray_audit_zero_horizon():
    cfg = _quick(rays={"count": 2, "horizon": 0.0, "step": 0.02})
    rep, tables = run_ray_audit(scenario_from_dict(cfg))
    assert rep.to_dict()["rays"]["note"] == "no samples"
    assert tables == []


def test_ray_audit_pipeline_nearly_isotropic():
    # f = 1 on the flat disk: u = |x|^2/2, so rays are isotropic up to the
    # O(h^2) trace-free error of the recovered Hessian (about 3e-5 here)
    rep, tables = run_ray_audit(scenario_from_dict(_quick(immersion={"id": "flat_disk", "refinement": 4})))
    assert rep.exit_code == 0 and tables
    for tab in tables:
        cols = tab["columns"]
        assert max(abs(d - b) / b for d, b in zip(cols["det_P"], cols["bound"])) <= 1e-4


def test_ray_table_isotropic_equality(tmp_path):
    chart = make_chart("euclidean", {"dim": 4})
    I = np.eye(4)
    ray = make_ray(chart, np.zeros(4), 0.6 * I[0], 0.3 * I[2], I[:2], I[2:], 5.0, 0.01)
    system = evolve_jacobi(chart, ray, 0.7 * np.eye(2), np.zeros((2, 2, 2)))
    tab = _ray_table(0, 0, system, det_bound_check(system, 1.0), None)
    write_ray_tables([tab], tmp_path)
    with open(tmp_path / "ray_000.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    for row in rows:
        det, bound = float(row["det_P"]), float(row["bound"])
        assert abs(det - bound) <= 1e-8 * max(1.0, bound)


def test_ray_audit_sphere_slack_nonnegative():
    cfg = _quick(chart={"id": "stereographic_sphere", "params": {"dim": 4}},
                 immersion={"id": "flat_disk", "params": {"radius": 0.3}, "refinement": 2},
                 rays={"count": 3, "horizon": 1.5, "step": 0.02})
    rep, tables = run_ray_audit(scenario_from_dict(cfg))
    assert tables
    for tab in tables:
        assert min(tab["columns"]["slack"]) >= -1e-5 * max(tab["columns"]["bound"])


def test_avr_command_allows_low_codimension(quick_file, capsys):
    cfg = _quick(chart={"id": "sphere_flat_product", "params": {"sphere_dim": 2, "flat_dim": 1}})
    assert run_avr(scenario_from_dict(cfg, require_codim=False)).exit_code == 0
    assert main(["avr", quick_file(cfg)]) == 0
    assert main(["curvature-audit", quick_file(cfg)]) == 1
    assert "BadCodimension" in capsys.readouterr().err


def test_curvature_audit_command():
    cfg = _quick(chart={"id": "sphere_flat_product", "params": {"sphere_dim": 2, "flat_dim": 2}})
    rep = run_curvature_audit(scenario_from_dict(cfg))
    assert rep.exit_code == 0 and rep.checks == {"curvature_hypothesis": True, "symmetry": True}


# reports --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def quick_report():
    return run_verify(scenario_from_dict(QUICK))


def test_json_csv_round_trip(quick_report):
    table = csv_to_scalars(to_csv(quick_report))
    again = csv_to_scalars(to_csv(report_from_json(to_json(quick_report))))
    assert table == again == scalar_table(quick_report)
    assert table["inequality.ratio"] == quick_report.ratio
    assert report_from_json(to_json(quick_report)).to_dict() == json.loads(to_json(quick_report))


def test_text_report(quick_report):
    text = to_text(quick_report)
    assert text.startswith("PASS ratio=")
    assert "check map:" in text and "[ok] inequality" in text


def test_emit_report(tmp_path, quick_report):
    out = tmp_path / "r.csv"
    doc = emit_report(quick_report, "csv", str(out))
    assert out.read_text(encoding="utf-8") == doc
    with pytest.raises(ValueError):
        emit_report(quick_report, "xml")


def test_report_json_is_strict(quick_report):
    doc = to_json(quick_report)
    json.loads(doc, parse_constant=lambda c: pytest.fail(f"non-finite constant {c}"))


# command line ---------------------------------------------------------------------

def test_cli_verify_exit_zero(quick_file, capsys):
    assert main(["verify", quick_file(), "--format", "text"]) == 0
    cap = capsys.readouterr()
    assert "PASS ratio=" in cap.err and cap.out.startswith("PASS ratio=")


def test_cli_usage_errors(quick_file, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", quick_file()])
    assert exc.value.code == 1
    assert main(["verify", str(tmp_path / "missing.json")]) == 1
    assert main(["verify", quick_file(_quick(colour=1), "bad.json")]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_partial_report_exit_three(quick_file, tmp_path):
    cfg = _quick(chart={"id": "stereographic_sphere", "params": {"dim": 4}},
                 immersion={"id": "flat_disk", "params": {"radius": 0.3}, "refinement": 2},
                 avr={"radius": 5.0, "n_dirs": 100, "steps": 20})
    out = tmp_path / "report.json"
    assert main(["verify", quick_file(cfg), "--out", str(out)]) == 3
    assert json.loads(out.read_text(encoding="utf-8"))["failed_stage"] == "avr"


def test_verdict_rule():
    theta = {"estimate": 1.0, "stderr": 0.0}
    rep = _finish(InequalityReport("verify", "x", "theorem1", checks={"lemma_bound": True}), 0.9, 1.0, theta, 0.03, 2)
    assert (rep.verdict, rep.exit_code) == ("fail", 2)
    rep = _finish(InequalityReport("verify", "x", "theorem1", checks={"lemma_bound": False}), 1.0, 1.0, theta, 0.03, 2)
    assert (rep.verdict, rep.exit_code) == ("fail", 3)
    rep = _finish(InequalityReport("verify", "x", "theorem1", checks={"lemma_bound": True}), 0.975, 1.0, theta, 0.03, 2)
    assert (rep.verdict, rep.exit_code) == ("pass", 0)
    # the theta standard error widens the margin
    wide = {"estimate": 1.0, "stderr": 0.04}
    rep = _finish(InequalityReport("verify", "x", "theorem1"), 0.96, 1.0, wide, 0.03, 2)
    assert rep.exit_code == 0 and rep.sections["inequality"]["tau_effective"] == pytest.approx(0.05)


def test_cli_ray_audit_directory(quick_file, tmp_path):
    out = tmp_path / "rays"
    assert main(["ray-audit", quick_file(), "--out", str(out), "--format", "csv"]) == 0
    files = sorted(os.listdir(out))
    assert "summary.csv" in files and "ray_000.csv" in files
    with open(out / "ray_000.csv", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    assert header[:3] == ["t", "det_P", "bound"]


def test_cli_overrides(quick_file, tmp_path):
    out = tmp_path / "r.json"
    assert main(["verify", quick_file(), "--seed", "4", "--refine", "1", "--out", str(out)]) == 0
    d = json.loads(out.read_text(encoding="utf-8"))
    assert d["provenance"]["seeds"]["avr"] == 4
    assert d["provenance"]["mesh"]["refinement"] == 1


def test_cli_subprocess_deterministic(quick_file):
    path = quick_file()
    env = dict(os.environ, KRICCI_THREADS="1")
    runs = [subprocess.run([sys.executable, "-m", "kricci", "verify", path], capture_output=True,
                           text=True, env=env, check=False) for _ in range(2)]
    assert [r.returncode for r in runs] == [0, 0]
    assert runs[0].stdout == runs[1].stdout
    assert math.isfinite(json.loads(runs[0].stdout)["inequality"]["ratio"])
