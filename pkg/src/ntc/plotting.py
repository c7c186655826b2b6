"""Self-contained SVG loss curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 20, 40


class TraceFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class TracePoint:
    epoch: int
    step: int
    loss: float


def read_trace(path: str | Path) -> list[TracePoint]:
    points = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if lineno == 1:
                if row != ["epoch", "step", "loss"]:
                    raise TraceFormatError(1, "header must be 'epoch,step,loss'")
                continue
            if len(row) != 3:
                raise TraceFormatError(lineno, f"expected 3 fields, got {len(row)}")
            try:
                points.append(TracePoint(int(row[0]), int(row[1]), float(row[2])))
            except ValueError:
                raise TraceFormatError(lineno, "non-numeric field") from None
    if not points:
        raise TraceFormatError(1, "trace has no data rows")
    return points


def loss_svg(points: list[TracePoint], title: str = "training loss") -> str:
    """Loss against step as one polyline, with a tick where each epoch starts."""
    steps = [p.step for p in points]
    losses = [p.loss for p in points]
    x0, x1 = min(steps), max(steps)
    y0, y1 = min(losses), max(losses)
    xs = (x1 - x0) or 1
    ys = (y1 - y0) or 1.0
    pw = WIDTH - LEFT - RIGHT
    ph = HEIGHT - TOP - BOTTOM

    def X(s):
        return LEFT + (s - x0) / xs * pw

    def Y(v):
        return TOP + (1.0 - (v - y0) / ys) * ph

    coords = " ".join(f"{X(p.step):.2f},{Y(p.loss):.2f}" for p in points)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="14" text-anchor="middle" font-size="12">{title}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
        f'<text x="{LEFT - 4}" y="{TOP + 4}" text-anchor="end" font-size="10">{y1:.4g}</text>',
        f'<text x="{LEFT - 4}" y="{TOP + ph}" text-anchor="end" font-size="10">{y0:.4g}</text>',
        f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 6}" text-anchor="middle" font-size="11">step</text>',
    ]
    prev = None
    for p in points:
        if p.epoch != prev:
            x = X(p.step)
            out.append(f'<line class="epoch-tick" x1="{x:.2f}" y1="{TOP + ph}" x2="{x:.2f}" y2="{TOP + ph + 6}" '
                       f'stroke="gray"/>')
            out.append(f'<text x="{x:.2f}" y="{TOP + ph + 18}" text-anchor="middle" font-size="9">{p.epoch}</text>')
            prev = p.epoch
    out.append(f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{coords}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
