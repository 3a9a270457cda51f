"""File emission: atomic writes, training curves (CSV + SVG), decomposition tables."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from .training import TrainLog

_W, _H = 640, 400
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 70, 20, 30, 50


def atomic_write(path, data) -> None:
    """Write text or bytes to ``path`` via a temp file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _points(values, x0, x1, y0, y1, lo, hi) -> str:
    n = len(values)
    span = hi - lo if hi > lo else 1.0
    pts = []
    for i, v in enumerate(values):
        x = x0 + (x1 - x0) * (i / (n - 1) if n > 1 else 0.0)
        y = y1 - (y1 - y0) * ((v - lo) / span if hi > lo else 0.5)
        pts.append(f"{x:.2f},{y:.2f}")
    return " ".join(pts)


def curves_svg(log: TrainLog, title: str = "") -> str:
    """Line chart of train and test MAE against epoch (epoch 0 is the initial evaluation)."""
    train = [log.initial_train_mae] + list(log.train_mae)
    test = [log.initial_test_mae] + list(log.test_mae)
    lo, hi = min(train + test), max(train + test)
    x0, x1 = _PAD_L, _W - _PAD_R
    y0, y1 = _PAD_T, _H - _PAD_B
    last = len(train) - 1
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.1f}" y="{_H - 12}" text-anchor="middle" font-size="14">epoch</text>',
        f'<text x="18" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">MAE</text>',
        f'<text x="{x0}" y="{y1 + 18}" font-size="11">0</text>',
        f'<text x="{x1}" y="{y1 + 18}" text-anchor="end" font-size="11">{last}</text>',
        f'<text x="{x0 - 6}" y="{y1}" text-anchor="end" font-size="11">{lo:.4g}</text>',
        f'<text x="{x0 - 6}" y="{y0 + 4}" text-anchor="end" font-size="11">{hi:.4g}</text>',
        f'<polyline class="train" fill="none" stroke="#1f77b4" stroke-width="2" '
        f'points="{_points(train, x0, x1, y0, y1, lo, hi)}"/>',
        f'<polyline class="test" fill="none" stroke="#d62728" stroke-width="2" '
        f'points="{_points(test, x0, x1, y0, y1, lo, hi)}"/>',
        f'<text x="{x1 - 110}" y="{y0 + 4}" font-size="12" fill="#1f77b4">train MAE</text>',
        f'<text x="{x1 - 110}" y="{y0 + 20}" font-size="12" fill="#d62728">test MAE</text>',
    ]
    if title:
        parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_curves(log: TrainLog, path, title: str = "") -> tuple:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    if log.epochs == 0:
        raise ValueError("cannot emit curves for a log with no epochs")
    base = Path(path)
    if base.suffix in (".csv", ".svg"):
        base = base.with_suffix("")
    csv_path, svg_path = base.with_suffix(".csv"), base.with_suffix(".svg")
    atomic_write(csv_path, log.to_csv())
    atomic_write(svg_path, curves_svg(log, title or base.name))
    return csv_path, svg_path


def decomposition_table(rows) -> str:
    """Markdown table in the shape Models | MAE | AE | EE | OE | MAE_B."""
    lines = ["| Model | Structure | MAE | AE | EE | OE | MAE_B |",
             "|---|---|---|---|---|---|---|"]
    for r in rows:
        if r.get("failed"):
            lines.append(f"| {r['name']} | {r['structure']} | failed | - | - | - | - |")
            continue
        lines.append("| {name} | {structure} | {test_mae:.4f} | {AE:.4f} | {EE:.4f} | {OE:.4f} | {MAE_B:.4f} |"
                     .format(**r))
    return "\n".join(lines) + "\n"
