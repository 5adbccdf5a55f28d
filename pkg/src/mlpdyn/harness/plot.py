"""Static SVG line charts from metrics.csv.

Output is a pure function of the CSV text: no timestamps, fixed number
formatting, deterministic ordering of series.
"""

import csv
from pathlib import Path

from ..errors import DataError
from .analyze import METRICS_SCHEMA

FAMILIES = {
    "loss": ["train_loss"],
    "feature_similarity": ["feature_cos_mean"],
    "gradient_similarity": ["grad_cos_mean"],
    "gating_similarity": ["gating_sim_mean"],
    "pseudoneuron_similarity": ["pn_sim_sample_mean", "pn_sim_aggregate_mean"],
    "o_value": ["o_mean", "o_nonneg_frac"],
    "alpha_consistency": ["alpha_min", "alpha_mean"],
    "dominance": ["dom_kept", "dom_ignored"],
    "strengths": [f"s{i}" for i in range(1, 33)],
}

WIDTH, HEIGHT = 640, 400
MARGIN = 56
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22"]


def read_metrics(path):
    """Parse metrics.csv into ``(columns, rows)``; rows are dicts of floats or None."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(f"# schema {METRICS_SCHEMA} "):
        found = lines[0][:40] if lines else "empty file"
        raise DataError(f"{path}:1: expected schema '{METRICS_SCHEMA}', found {found!r}")
    reader = csv.reader(lines[1:])
    try:
        columns = next(reader)
    except StopIteration:
        raise DataError(f"{path}:2: missing header row") from None
    for required in ("epoch", "layer"):
        if required not in columns:
            raise DataError(f"{path}:2: header lacks the {required!r} column")
    rows = []
    for lineno, fields in enumerate(reader, start=3):
        if len(fields) != len(columns):
            raise DataError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(fields)}")
        row = {}
        for name, value in zip(columns, fields):
            if value == "":
                row[name] = None
                continue
            try:
                row[name] = float(value)
            except ValueError:
                raise DataError(f"{path}:{lineno}: column {name!r} has non-numeric value "
                                f"{value!r}") from None
        if row["epoch"] is None or row["layer"] is None:
            raise DataError(f"{path}:{lineno}: epoch and layer must be present")
        rows.append(row)
    return columns, rows


def _num(x):
    return f"{x:.3f}".rstrip("0").rstrip(".") if x != int(x) else str(int(x))


def _tick(x):
    return f"{x:.4g}"


def series_for(columns, rows, family):
    """``[(label, [(epoch, value), ...]), ...]`` for the non-empty columns of a family."""
    cols = [c for c in FAMILIES[family] if c in columns]
    layers = sorted({int(r["layer"]) for r in rows})
    if family == "loss" and layers:
        layers = layers[:1]
    out = []
    for col in cols:
        for layer in layers:
            pts = [(r["epoch"], r[col]) for r in rows
                   if int(r["layer"]) == layer and r[col] is not None]
            pts.sort()
            if pts:
                label = col if family == "loss" else f"{col} l{layer}"
                out.append((label, pts))
    return out


def render_svg(title, series):
    xs = [p[0] for _, pts in series for p in pts]
    ys = [p[1] for _, pts in series for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(x):
        return MARGIN + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{title}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        parts.append(f'<text x="{_num(sx(xv))}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_tick(xv)}</text>')
        parts.append(f'<text x="{MARGIN - 6}" y="{_num(sy(yv) + 4)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{_tick(yv)}</text>')
    parts.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">epoch</text>')
    for i, (label, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{coords}"><title>{label}</title></polyline>')
        parts.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i}" '
                     f'font-family="sans-serif" font-size="10" fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def run_plot(metrics_csv, out_dir=None):
    """Write one SVG per metric family next to the CSV (or into ``out_dir``).

    Returns ``(written, omitted)``: paths of the charts and names of the
    families skipped because all their columns were empty.
    """
    columns, rows = read_metrics(metrics_csv)
    out = Path(out_dir) if out_dir is not None else Path(metrics_csv).parent / "plots"
    written, omitted = [], []
    charts = {}
    for family in FAMILIES:
        series = series_for(columns, rows, family)
        if not series:
            omitted.append(family)
            continue
        charts[family] = render_svg(family.replace("_", " "), series)
    out.mkdir(parents=True, exist_ok=True)
    for family, svg in charts.items():
        path = out / f"{family}.svg"
        path.write_text(svg)
        written.append(path)
    return written, omitted
