"""Serialization of reports: JSON, flat CSV scalar table, and text."""
from __future__ import annotations

import csv
import io
import json
import os

from .verify import CHECK_MAP, InequalityReport


def to_json(report: InequalityReport) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "null"
    return str(v)


def to_csv(report: InequalityReport) -> str:
    """Two-column ``key,value`` table of every scalar leaf (dotted keys)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    flat = {}

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}.{k}" if prefix else str(k), v)
        elif not isinstance(obj, list):
            flat[prefix] = obj

    walk("", report.to_dict())
    for k, v in flat.items():
        w.writerow([k, _fmt(v)])
    return buf.getvalue()


def _parse_value(s: str):
    if s == "true":
        return True
    if s == "false":
        return False
    if s == "null":
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def csv_to_scalars(text: str) -> dict:
    """Inverse of :func:`to_csv` for the scalar table."""
    rows = list(csv.reader(io.StringIO(text)))
    return {k: _parse_value(v) for k, v in rows[1:]}


def scalar_table(report: InequalityReport) -> dict:
    """The same flat table as :func:`to_csv`, built from the JSON form."""
    return csv_to_scalars(to_csv(InequalityReport(**_fields(json.loads(to_json(report))))))


def _fields(d: dict) -> dict:
    head = ("command", "scenario", "mode", "verdict", "exit_code", "failed_stage", "error", "checks")
    out = {k: d[k] for k in head}
    out["sections"] = {k: v for k, v in d.items() if k not in head}
    return out


def report_from_json(text: str) -> InequalityReport:
    return InequalityReport(**_fields(json.loads(text)))


def headline(report: InequalityReport) -> str:
    if report.failed_stage:
        return f"ERROR stage={report.failed_stage} ({report.error})"
    ratio = report.ratio
    tag = "PASS" if report.verdict == "pass" else "FAIL"
    if ratio is None:
        return tag
    return f"{tag} ratio={ratio:.6f}"


def to_text(report: InequalityReport) -> str:
    lines = [headline(report), f"command: {report.command}   scenario: {report.scenario}   mode: {report.mode}"]
    if report.failed_stage:
        lines.append(f"!! stage failed: {report.failed_stage}")
    lines.append("")
    lines.append("checks:")
    for name, ok in report.checks.items():
        lines.append(f"  [{'ok' if ok else 'FAIL'}] {name:<22} {CHECK_MAP.get(name, '')}")
    for sec, body in report.sections.items():
        lines.append("")
        lines.append(f"{sec}:")
        if isinstance(body, dict):
            for k, v in body.items():
                if isinstance(v, dict):
                    lines.append(f"  {k}:")
                    for k2, v2 in v.items():
                        lines.append(f"    {k2}: {_fmt(v2)}")
                else:
                    lines.append(f"  {k}: {_fmt(v)}")
        else:
            lines.append(f"  {_fmt(body)}")
    lines.append("")
    lines.append("check map:")
    for name, text in CHECK_MAP.items():
        lines.append(f"  {name}: {text}")
    return "\n".join(lines) + "\n"


FORMATS = {"json": to_json, "csv": to_csv, "text": to_text}


def emit_report(report: InequalityReport, fmt: str = "json", out: str | None = None) -> str:
    """Render ``report``; write it to ``out`` when given.  Returns the document."""
    try:
        doc = FORMATS[fmt](report)
    except KeyError:
        raise ValueError(f"unknown format {fmt!r}") from None
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(doc)
    return doc


def write_ray_tables(tables, directory) -> list[str]:
    """One CSV per ray with its trajectory columns."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for tab in tables:
        path = os.path.join(directory, f"ray_{tab['ray']:03d}.csv")
        cols = tab["columns"]
        names = list(cols)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in zip(*(cols[c] for c in names)):
                w.writerow([repr(float(x)) for x in row])
        paths.append(path)
    return paths
