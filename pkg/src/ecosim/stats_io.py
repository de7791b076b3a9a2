"""Run outputs: population and event CSVs, the reproducibility manifest and
a small self-contained SVG line chart."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import file_digest
from .scenario import PopulationTimeSeries
from .world import Event

CSV_SCHEMA_VERSION = 1
POPULATION_COLUMNS = ("step", "species", "count")
EVENT_COLUMNS = ("step", "event_type", "species", "id", "cause", "x", "y")
MANIFEST_FORMAT = "ecosim-run-manifest"


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    start_step: int
    end_step: int
    total_steps: int
    artifact_version: str = __version__
    csv_schema: int = CSV_SCHEMA_VERSION
    markers: list[int] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)  # file name -> sha256
    format: str = MANIFEST_FORMAT

    def add_output(self, path) -> None:
        path = Path(path)
        self.outputs[path.name] = file_digest(path)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            d = json.load(fh)
        if d.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"{path}: not a run manifest")
        return cls(**d)

    def verify(self, directory) -> list[str]:
        """Names of listed outputs whose content no longer matches."""
        directory = Path(directory)
        return sorted(n for n, h in self.outputs.items()
                      if not (directory / n).is_file() or file_digest(directory / n) != h)


def write_populations(series: PopulationTimeSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POPULATION_COLUMNS)
        for k, step in enumerate(series.steps):
            for sp in sorted(series.counts):
                w.writerow([step, sp, series.counts[sp][k]])


def read_populations(path) -> PopulationTimeSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != POPULATION_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(POPULATION_COLUMNS)}")
        series = PopulationTimeSeries()
        for lineno, row in enumerate(reader, start=2):
            try:
                step, sp, count = int(row[0]), row[1], int(row[2])
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed row {row}") from None
            if not series.steps or series.steps[-1] != step:
                series.steps.append(step)
            series.counts.setdefault(sp, []).append(count)
    if any(len(c) != len(series.steps) for c in series.counts.values()):
        raise ValueError(f"{path}: species have unequal sample counts")
    return series


def write_events(events: Sequence[Event], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for ev in events:
            w.writerow(ev.row())


def write_run(out_dir, series: PopulationTimeSeries, events: Sequence[Event], config_hash: str, seed: int,
              total_steps: int) -> RunManifest:
    """populations.csv, events.csv and manifest.json into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    man = RunManifest(config_hash, seed, 0, series.end_step, total_steps, markers=list(series.markers))
    write_populations(series, out_dir / "populations.csv")
    write_events(events, out_dir / "events.csv")
    man.add_output(out_dir / "populations.csv")
    man.add_output(out_dir / "events.csv")
    man.write(out_dir / "manifest.json")
    return man


# ---------------------------------------------------------------------------
# chart

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
WIDTH, HEIGHT = 720, 420
LEFT, RIGHT, TOP, BOTTOM = 64, 130, 24, 48


def _nice_ticks(hi: float, n: int = 5) -> list[float]:
    if hi <= 0:
        return [0.0]
    raw = hi / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    return [i * step for i in range(int(math.floor(hi / step + 1e-9)) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def write_chart(series: PopulationTimeSeries, path, title: str = "") -> None:
    """Population against step, one polyline per species, markers at
    intervention changes."""
    if not series.steps or not series.counts:
        raise ValueError("cannot chart an empty series")
    x_hi = max(series.steps[-1], 1)
    y_hi = max(1, max(max(c) for c in series.counts.values()))
    yt = _nice_ticks(y_hi)
    if yt[-1] < y_hi:
        yt.append(yt[-1] + (yt[1] - yt[0] if len(yt) > 1 else 1))
    y_hi = yt[-1]
    xt = _nice_ticks(x_hi)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + pw * x / x_hi

    def py(y):
        return TOP + ph * (1 - y / y_hi)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<g font-family="sans-serif" font-size="12">',
    ]
    if title:
        out.append(f'<text x="{LEFT}" y="{TOP - 8}">{_escape(title)}</text>')
    for t in yt:
        out.append(f'<line x1="{LEFT}" y1="{_fmt(py(t))}" x2="{LEFT + pw}" y2="{_fmt(py(t))}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{_fmt(t)}</text>')
    for t in xt:
        out.append(f'<line x1="{_fmt(px(t))}" y1="{TOP + ph}" x2="{_fmt(px(t))}" y2="{TOP + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{TOP + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{LEFT + pw / 2:g}" y="{HEIGHT - 10}" text-anchor="middle">step</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:g}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:g})">count</text>')
    for m in series.markers:
        if 0 <= m <= x_hi:
            x = px(m)
            out.append(f'<polygon points="{_fmt(x - 5)},{TOP + ph + 30} {_fmt(x + 5)},{TOP + ph + 30} '
                       f'{_fmt(x)},{TOP + ph + 22}" class="marker" fill="black"/>')
    for k, sp in enumerate(sorted(series.counts)):
        color = PALETTE[k % len(PALETTE)]
        pts = [(px(s), py(c)) for s, c in zip(series.steps, series.counts[sp])]
        if len(pts) == 1:
            out.append(f'<circle cx="{_fmt(pts[0][0])}" cy="{_fmt(pts[0][1])}" r="3" fill="{color}"/>')
        else:
            coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 14 + 18 * k
        out.append(f'<line x1="{LEFT + pw + 12}" y1="{ly}" x2="{LEFT + pw + 36}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 42}" y="{ly + 4}">{_escape(sp)}</text>')
    out += ["</g>", "</svg>", ""]
    Path(path).write_text("\n".join(out))


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
