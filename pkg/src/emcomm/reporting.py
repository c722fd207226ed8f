"""Aggregate run records into tables and draw curves / scatter plots.

CSV is the canonical output.  The SVG writers are dependency-free and only
meant for a quick look.
"""

from __future__ import annotations

import csv
import html
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean, stdev

from .errors import ContractError
from .trainer import RunRecord

ACCURACY_COLUMNS = ("train", "ind", "ood")
METRIC_COLUMNS = ("posdis", "bosdis", "topsim")
HEADINGS = {
    "train": "train",
    "ind": "IND test",
    "ood": "OOD test",
    "posdis": "posdis",
    "bosdis": "bosdis",
    "topsim": "topsim",
}
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


@dataclass
class AggregateRow:
    label: str
    n_runs: int
    # column -> (mean, sample std or None when fewer than two values)
    stats: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)


@dataclass
class AggregateReport:
    kind: str
    columns: tuple[str, ...]
    rows: list[AggregateRow]

    def row(self, label: str) -> AggregateRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    return fmean(values), (stdev(values) if len(values) >= 2 else None)


def _column_values(records: list[RunRecord], col: str) -> list[float]:
    if col in ACCURACY_COLUMNS:
        return [r.final[col] for r in records if r.final.get(col) is not None and not math.isnan(r.final[col])]
    return [r.metrics[col] for r in records if r.metrics and r.metrics.get(col) is not None]


def aggregate(records: list[RunRecord]) -> AggregateReport:
    """Mean and sample std per architecture label, in first-seen label order."""
    if not records:
        raise ContractError("nothing to aggregate")
    kinds = {r.kind for r in records}
    if len(kinds) != 1:
        raise ContractError(f"cannot aggregate mixed experiment kinds {sorted(kinds)}")
    kind = kinds.pop()
    columns = ACCURACY_COLUMNS + (METRIC_COLUMNS if kind == "communication-game" else ())
    groups: dict[str, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(r.label, []).append(r)
    rows = [
        AggregateRow(label, len(recs), {c: _mean_std(_column_values(recs, c)) for c in columns})
        for label, recs in groups.items()
    ]
    return AggregateReport(kind, columns, rows)


# ------------------------------------------------------------------ tables


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def emit_table(report: AggregateReport, path, fmt: str = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        header = ["kind", "architecture", "runs"]
        for c in report.columns:
            header += [f"{c}_mean", f"{c}_std"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in report.rows:
                cells = [report.kind, row.label, str(row.n_runs)]
                for c in report.columns:
                    m, s = row.stats[c]
                    cells += [_fmt(m), _fmt(s)]
                w.writerow(cells)
    elif fmt in ("text", "aligned-text"):
        path.write_text(format_table(report), encoding="utf-8")
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    return path


def format_table(report: AggregateReport) -> str:
    def cell(m, s):
        if m is None:
            return "-"
        return f"{m:.2f} ± {s:.2f}" if s is not None else f"{m:.2f}"

    header = ["Model", "runs"] + [HEADINGS[c] for c in report.columns]
    body = [[r.label, str(r.n_runs)] + [cell(*r.stats[c]) for c in report.columns] for r in report.rows]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip() for line in [header] + body]
    return "\n".join(lines) + "\n"


def read_table(path) -> AggregateReport:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ContractError(f"{path}: empty table")
    columns = tuple(k[: -len("_mean")] for k in rows[0] if k.endswith("_mean"))
    parse = lambda s: float(s) if s else None  # noqa: E731
    out = [
        AggregateRow(r["architecture"], int(r["runs"]), {c: (parse(r[f"{c}_mean"]), parse(r[f"{c}_std"])) for c in columns})
        for r in rows
    ]
    return AggregateReport(rows[0]["kind"], columns, out)


# ------------------------------------------------------------------ figures


def run_id(record: RunRecord) -> str:
    return f"{record.experiment or record.kind}/{record.label}/seed{record.seed}"


def _colors(records: list[RunRecord]) -> dict[str, str]:
    labels = list(dict.fromkeys(r.label for r in records))
    return {label: PALETTE[i % len(PALETTE)] for i, label in enumerate(labels)}


class _Panel:
    """One axes box in an SVG canvas, mapping data to pixels."""

    def __init__(self, x0, y0, w, h, xlim, ylim, title, xlabel, ylabel):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def px(self, x: float, y: float) -> tuple[float, float]:
        (xa, xb), (ya, yb) = self.xlim, self.ylim
        fx = (x - xa) / (xb - xa) if xb > xa else 0.5
        fy = (y - ya) / (yb - ya) if yb > ya else 0.5
        return self.x0 + fx * self.w, self.y0 + self.h - fy * self.h

    def frame(self) -> list[str]:
        (xa, xb), (ya, yb) = self.xlim, self.ylim
        t = html.escape
        return [
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.w}" height="{self.h}" fill="none" stroke="#333"/>',
            f'<text x="{self.x0 + self.w / 2}" y="{self.y0 - 8}" text-anchor="middle" font-size="13">{t(self.title)}</text>',
            f'<text x="{self.x0 + self.w / 2}" y="{self.y0 + self.h + 32}" text-anchor="middle" font-size="11">{t(self.xlabel)}</text>',
            f'<text x="{self.x0 - 34}" y="{self.y0 + self.h / 2}" text-anchor="middle" font-size="11" '
            f'transform="rotate(-90 {self.x0 - 34} {self.y0 + self.h / 2})">{t(self.ylabel)}</text>',
            f'<text x="{self.x0}" y="{self.y0 + self.h + 14}" font-size="10">{xa:g}</text>',
            f'<text x="{self.x0 + self.w}" y="{self.y0 + self.h + 14}" text-anchor="end" font-size="10">{xb:g}</text>',
            f'<text x="{self.x0 - 4}" y="{self.y0 + self.h}" text-anchor="end" font-size="10">{ya:g}</text>',
            f'<text x="{self.x0 - 4}" y="{self.y0 + 10}" text-anchor="end" font-size="10">{yb:g}</text>',
        ]


def _svg(width: int, height: int, body: list[str]) -> str:
    return "\n".join(
        [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">']
        + [f'<rect width="{width}" height="{height}" fill="white"/>']
        + body
        + ["</svg>"]
    ) + "\n"


def _legend(colors: dict[str, str], x: float, y: float) -> list[str]:
    out = []
    for i, (label, color) in enumerate(colors.items()):
        yy = y + 16 * i
        out.append(f'<line x1="{x}" y1="{yy}" x2="{x + 18}" y2="{yy}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{x + 24}" y="{yy + 4}" font-size="11">{html.escape(label)}</text>')
    return out


def emit_curves(records: list[RunRecord], out_dir, stem: str = "curves") -> tuple[Path, Path]:
    """Long-format CSV of every curve plus a two-panel SVG (train / OOD accuracy)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out / f"{stem}.csv", out / f"{stem}.svg"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "epoch", "series", "value"])
        for r in records:
            for series in ("train_acc", "train_loss", "ood_acc"):
                for epoch, v in zip(r.curves["epoch"], r.curves[series]):
                    if v is not None:
                        w.writerow([run_id(r), epoch, series, repr(float(v))])

    colors = _colors(records)
    max_epoch = max((max(r.curves["epoch"], default=0) for r in records), default=1) or 1
    panels = [
        _Panel(70, 40, 380, 260, (0, max_epoch), (0, 1), "Training accuracy", "epoch", "accuracy"),
        _Panel(530, 40, 380, 260, (0, max_epoch), (0, 1), "OOD accuracy", "epoch", "accuracy"),
    ]
    body = []
    for panel, series in zip(panels, ("train_acc", "ood_acc")):
        body += panel.frame()
        for r in records:
            pts = [panel.px(e, v) for e, v in zip(r.curves["epoch"], r.curves[series]) if v is not None]
            if pts:
                coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
                body.append(
                    f'<polyline points="{coords}" fill="none" stroke="{colors[r.label]}" '
                    f'stroke-width="1.2" stroke-opacity="0.7"/>'
                )
    body += _legend(colors, 940, 60)
    svg_path.write_text(_svg(1120, 360, body), encoding="utf-8")
    return csv_path, svg_path


def emit_scatter(records: list[RunRecord], out_dir, stem: str = "scatter") -> tuple[Path, Path]:
    """Final metric vs OOD accuracy, one panel per metric."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out / f"{stem}.csv", out / f"{stem}.svg"
    usable = [r for r in records if r.metrics and r.final.get("ood") is not None]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "metric", "value", "ood_accuracy"])
        for r in usable:
            for m in METRIC_COLUMNS:
                if r.metrics.get(m) is not None:
                    w.writerow([run_id(r), m, repr(float(r.metrics[m])), repr(float(r.final["ood"]))])

    colors = _colors(usable)
    body = []
    for i, m in enumerate(METRIC_COLUMNS):
        xlim = (-1, 1) if m == "topsim" else (0, 1)
        panel = _Panel(70 + i * 320, 40, 250, 250, xlim, (0, 1), m, m, "OOD accuracy")
        body += panel.frame()
        for r in usable:
            if r.metrics.get(m) is None:
                continue
            x, y = panel.px(r.metrics[m], r.final["ood"])
            body.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="4" fill="{colors[r.label]}" fill-opacity="0.75"/>')
    body += _legend(colors, 1030, 60)
    svg_path.write_text(_svg(1200, 340, body), encoding="utf-8")
    return csv_path, svg_path
