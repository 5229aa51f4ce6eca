"""Report containers and writers (JSON, CSV, a small SVG line chart)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__

MANIFEST_SCHEMA = 1


def _clean(x):
    """JSON-safe, deterministic representation of numbers and containers."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        x = x.item()
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(repr(x))
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    seed: int | None = None
    tables: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    runtime: float = 0.0

    def add_verdict(self, name: str, verdict: str, detail: str, table: str | None = None) -> None:
        if verdict not in ("pass", "fail", "inconclusive"):
            raise ValueError(verdict)
        self.verdicts[name] = {"verdict": verdict, "detail": detail, "table": table}

    @property
    def overall(self) -> str:
        v = [x["verdict"] for x in self.verdicts.values()]
        if "fail" in v:
            return "fail"
        if v and all(x == "pass" for x in v):
            return "pass"
        return "inconclusive"

    def to_json(self) -> dict:
        # runtime is left out so reruns are byte-identical
        return {"experiment": self.experiment, "config": self.config, "seed": self.seed,
                "tables": self.tables, "verdicts": self.verdicts, "notes": self.notes,
                "overall": self.overall}

    def write(self, out_dir: str | os.PathLike, fmt: str = "csv") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json"]
        paths[0].write_text(dumps(self.to_json()))
        for name, rows in self.tables.items():
            p = out / f"{name}.csv"
            p.write_text(to_csv(rows))
            paths.append(p)
        return paths


def to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0].keys())
    for r in rows[1:]:
        for k in r:
            if k not in cols:
                cols.append(k)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in cols})
    return buf.getvalue()


def _fmt(v):
    v = _clean(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return v


def manifest(command: str, config: dict) -> dict:
    return {"schema": MANIFEST_SCHEMA, "tool": "karlin-lil", "version": __version__,
            "command": command, "config": config}


def svg_lines(series: dict, x_label: str = "t", y_label: str = "", log_x: bool = True,
              width: int = 640, height: int = 400) -> str:
    """Minimal SVG line chart.  ``series`` maps a label to (xs, ys)."""
    pad = 50
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys)
           if _finite(x) and _finite(y) and (x > 0 or not log_x)]
    if not pts:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    tx = (lambda x: math.log10(x)) if log_x else (lambda x: x)
    x0, x1 = min(tx(p[0]) for p in pts), max(tx(p[0]) for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(x):
        return pad + (tx(x) - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
           'fill="none" stroke="#888"/>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">'
           f'{x_label}{" (log10)" if log_x else ""}</text>',
           f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
           f'text-anchor="middle">{y_label}</text>',
           f'<text x="{pad}" y="{pad - 6}" font-size="10">{y1:.4g}</text>',
           f'<text x="{pad}" y="{height - pad + 12}" font-size="10">{y0:.4g}</text>']
    for i, (label, (xs, ys)) in enumerate(series.items()):
        c = colors[i % len(colors)]
        seg = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys)
                       if _finite(x) and _finite(y) and (x > 0 or not log_x))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{seg}"/>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 14 * (i + 1)}" font-size="10" '
                   f'fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _finite(v) -> bool:
    return isinstance(v, (int, float)) and math.isfinite(v)


def read_json(path: str | os.PathLike) -> dict:
    return json.loads(Path(path).read_text())


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def column(rows: Iterable[dict], key: str) -> list:
    return [r[key] for r in rows]
