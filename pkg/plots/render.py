#!/usr/bin/env python3
"""Render log-log convergence figures from adaptive-run CSV records.

Usage: render.py <spec.json> <out.png>

The spec is a small JSON document:

    {
      "series": [
        {"csv": "results/ms-p1-maximum-union.csv",
         "label": "p=1 (i)", "color": "maximum-union", "marker": "p1"},
        ...
      ],
      "slopes": [-1, -2, -3],
      "xlabel": "cumulative DOFs",
      "ylabel": "goal error estimator"
    }

One curve is drawn per CSV (`estimator` over `cumulativeDofs`, both axes
logarithmic); dashed reference lines with the requested slopes are anchored
at the last data point of the first series.  The `color` role maps equal
roles (e.g. marking strategies) to equal colors, the `marker` role (e.g.
polynomial degrees) to equal markers.  No numerical processing is applied
beyond the log-log axes.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CSV_HEADER = "level,nElements,dofs,cumulativeDofs,eta,zeta,estimator,goalValue,nMarked"
X_COLUMN = 3  # cumulativeDofs
Y_COLUMN = 6  # estimator = eta * zeta

COLOR_CYCLE = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple",
               "tab:brown", "tab:pink", "tab:gray", "tab:olive", "tab:cyan")
MARKER_CYCLE = ("x", "o", "+", "d", "s", "^", "v", "*")


class PlotError(ValueError):
    """Unreadable, empty, or malformed input."""


@dataclass(frozen=True)
class Series:
    csv: str
    label: str
    color: str = ""
    marker: str = ""


@dataclass(frozen=True)
class PlotSpec:
    series: list
    slopes: list
    xlabel: str = "cumulative DOFs"
    ylabel: str = "estimator"
    output: str = ""

    def __post_init__(self):
        if not self.series:
            raise PlotError("a plot spec needs at least one series")
        if any(s >= 0 for s in self.slopes):
            raise PlotError("reference slopes must be negative")


def load_spec(path) -> PlotSpec:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise PlotError(f"spec file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise PlotError(f"{path}: invalid JSON: {exc}") from None
    series = [Series(**entry) for entry in raw.get("series", [])]
    return PlotSpec(
        series=series,
        slopes=list(raw.get("slopes", [])),
        xlabel=raw.get("xlabel", "cumulative DOFs"),
        ylabel=raw.get("ylabel", "estimator"),
        output=raw.get("output", ""),
    )


def read_curve(path) -> tuple[list[float], list[float]]:
    """Read (cumulativeDofs, estimator) columns from a driver CSV."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise PlotError(f"CSV file not found: {path}") from None
    if not lines or lines[0] != CSV_HEADER:
        raise PlotError(f"{path}:1: not a driver CSV (unexpected header)")
    if len(lines) < 2:
        raise PlotError(f"{path}: CSV has no data rows")
    xs, ys = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != 9:
            raise PlotError(f"{path}:{lineno}: expected 9 fields, got {len(fields)}")
        try:
            xs.append(float(fields[X_COLUMN]))
            ys.append(float(fields[Y_COLUMN]))
        except ValueError:
            raise PlotError(f"{path}:{lineno}: non-numeric record") from None
    return xs, ys


def _role_table(roles, cycle):
    table = {}
    for role in roles:
        if role not in table:
            table[role] = cycle[len(table) % len(cycle)]
    return table


def build_figure(spec: PlotSpec):
    """Build the matplotlib figure; separated from file output for testing."""
    colors = _role_table([s.color or s.label for s in spec.series], COLOR_CYCLE)
    markers = _role_table([s.marker or "" for s in spec.series], MARKER_CYCLE)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    first_curve = None
    for s in spec.series:
        xs, ys = read_curve(s.csv)
        if first_curve is None:
            first_curve = (xs, ys)
        ax.loglog(
            xs, ys, label=s.label,
            color=colors[s.color or s.label],
            marker=markers[s.marker or ""], markersize=4, linewidth=1.2,
        )
    x_anchor, y_anchor = first_curve[0][-1], first_curve[1][-1]
    x_lo = min(first_curve[0])
    for slope in spec.slopes:
        xs = [x_lo, x_anchor]
        ys = [y_anchor * (x / x_anchor) ** slope for x in xs]
        ax.loglog(xs, ys, "k--", linewidth=0.9,
                  label=f"slope {slope:g}", zorder=1)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    ax.grid(True, which="both", alpha=0.25)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return fig


def render(spec: PlotSpec, out_path) -> Path:
    """Render the spec to an image file and return its path."""
    fig = build_figure(spec)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print(__doc__.strip().splitlines()[2], file=sys.stderr)
        return 2
    try:
        spec = load_spec(argv[0])
        render(spec, argv[1])
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
