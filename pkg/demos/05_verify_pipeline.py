"""End-to-end verification of the bundled scenarios.

Each scenario runs the full pipeline: curvature audit, Neumann solve,
lemma check, transport rays, volume ratio and both sides of the
inequality.  The same runs are available from the command line, e.g.

    kricci verify scenarios/hemisphere.json --format text

    python demos/05_verify_pipeline.py [scenario.json ...]
"""
import pathlib
import sys

from kricci.report import headline, to_text
from kricci.scenario import load_config
from kricci.verify import run_isoperimetric, run_verify

root = pathlib.Path(__file__).resolve().parents[1] / "scenarios"
paths = [pathlib.Path(p) for p in sys.argv[1:]] or sorted(root.glob("*.json"))

for path in paths:
    sc = load_config(path)
    run = run_isoperimetric if sc.section("immersion")["id"] == "flat_annulus" else run_verify
    report = run(sc)
    print(f"{path.name:<28} {headline(report)}")

# full text report for the equality case
print()
print(to_text(run_verify(load_config(root / "flat_disk.json"))))
