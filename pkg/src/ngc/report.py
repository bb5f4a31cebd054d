"""Results-table summaries: one row per (representation, metric), one column per model/iteration."""

import json
from pathlib import Path

from .metrics import LABELS

_ORDER = ("depth", "normals_c", "normals_w", "semseg", "wireframe", "pose", "halftone")
_METRIC_ORDER = ("l1", "angular_l1", "l2", "accuracy", "miou", "pixels_improved", "position_l2", "orientation_l1")
_UNITS = {"l1": "L1", "angular_l1": "L1 (degrees)"}


class ReportError(FileNotFoundError):
    pass


def fmt(v):
    return "-" if v is None else f"{v:.6g}"


def column_title(col):
    k, model = col["iteration"], col["model"]
    return {"edge": f"it{k} EdgeNet", "ngc": f"it{k} NGC", "distil": f"it{k} Distil."}[model]


def _label(node_meta, metric):
    if metric == "position_l2":
        return "Position", "L2 (meters)"
    if metric == "orientation_l1":
        return "Orientation", "L1 (degrees)"
    name = node_meta.get("name", "")
    if metric == "l1" and node_meta.get("units"):
        return name, f"L1 ({node_meta['units']})"
    return name, LABELS.get(metric, metric)


def summary_from_evaluation(result):
    """Pivot evaluation rows (iteration, node, edge, metric, value) into the table layout."""
    columns = result["columns"]
    index = {}
    for r in result["rows"]:
        model = "ngc" if r["edge"] == "ngc" else ("edge" if r["iteration"] == 0 else "distil")
        index[(r["node"], r["metric"], r["iteration"], model)] = r["value"]
    nodes = sorted({n for n, *_ in index}, key=lambda n: (_ORDER.index(n) if n in _ORDER else len(_ORDER), n))
    rows = []
    for n in nodes:
        metrics = sorted({m for nn, m, *_ in index if nn == n}, key=lambda m: _METRIC_ORDER.index(m) if m in _METRIC_ORDER else 99)
        for m in metrics:
            rep, label = _label(result.get("nodes", {}).get(n, {}), m)
            values = [index.get((n, m, c["iteration"], c["model"])) for c in columns]
            rows.append({"node": n, "representation": rep or n, "metric": m, "label": label, "values": values})
    return {"columns": columns, "rows": rows}


def render_text(summary):
    """Aligned plain-text table; every number printed with 6 significant digits."""
    head = ["Representation", "Metric"] + [column_title(c) for c in summary["columns"]]
    body = [[r["representation"], r["label"]] + [fmt(v) for v in r["values"]] for r in summary["rows"]]
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]

    def line(cells):
        left = [c.ljust(w) for c, w in zip(cells[:2], widths[:2])]
        right = [c.rjust(w) for c, w in zip(cells[2:], widths[2:])]
        return "  ".join(left + right).rstrip()

    out = [line(head), "  ".join("-" * w for w in widths)]
    out += [line(r) for r in body]
    return "\n".join(out) + "\n"


def render_json(summary):
    """JSON rendering with the same 6-significant-digit values as the text table."""
    rows = [{**r, "values": [None if v is None else float(fmt(v)) for v in r["values"]]} for r in summary["rows"]]
    return json.dumps({"columns": summary["columns"], "rows": rows}, indent=1)


def load_summary(path):
    """A summary JSON file, or a run directory holding reports/summary.json."""
    path = Path(path)
    if path.is_dir():
        reps = path / "reports"
        if not list(reps.glob("iteration_*.json")):
            raise ReportError(f"no iteration reports under {reps}")
        path = reps / "summary.json"
        if not path.exists():
            raise ReportError(f"{path} missing; run evaluate first")
    if not path.exists():
        raise ReportError(f"{path} not found")
    doc = json.loads(path.read_text())
    if "columns" not in doc or "rows" not in doc:
        raise ValueError(f"{path} is not a summary (needs 'columns' and 'rows')")
    return doc
