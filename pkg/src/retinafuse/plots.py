"""Minimal standalone SVG charts (line plots and bar charts).

Output is plain text with fixed number formatting so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import RetinaFuseError

W, H = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _frame(title, xlabel, ylabel):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
        f'fill="none" stroke="black"/>',
    ]
    return parts


def line_plot(series, path, title="", xlabel="", ylabel="", xlim=None, ylim=None) -> None:
    """``series``: list of ``(xs, ys, label)``."""
    series = [(list(map(float, xs)), list(map(float, ys)), lab) for xs, ys, lab in series]
    if not series or any(len(xs) == 0 or len(xs) != len(ys) for xs, ys, _ in series):
        raise RetinaFuseError("nothing to plot: empty or malformed series")
    allx = [x for xs, _, _ in series for x in xs]
    ally = [y for _, ys, _ in series for y in ys]
    x0, x1 = xlim or (min(allx), max(allx))
    y0, y1 = ylim or (min(ally), max(ally))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    parts = _frame(title, xlabel, ylabel)
    for v, anchor in ((x0, "start"), (x1, "end")):
        parts.append(f'<text x="{_fmt(px(v))}" y="{TOP + ph + 16}" text-anchor="{anchor}" '
                     f'font-size="10">{v:.3g}</text>')
    for v in (y0, y1):
        parts.append(f'<text x="{LEFT - 4}" y="{_fmt(py(v) + 4)}" text-anchor="end" '
                     f'font-size="10">{v:.3g}</text>')
    for n, (xs, ys, label) in enumerate(series):
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
        color = COLORS[n % len(COLORS)]
        parts.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="2" '
                     f'points="{pts}"/>')
        parts.append(f'<text x="{W - RIGHT - 6}" y="{TOP + 16 + 14 * n}" text-anchor="end" '
                     f'font-size="11" fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def bar_chart(labels, values, path, title="", ylabel="", ylim=(0.0, 1.0)) -> None:
    if not labels or len(labels) != len(values):
        raise RetinaFuseError("nothing to plot: empty or mismatched bars")
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    y0, y1 = ylim
    slot = pw / len(labels)
    parts = _frame(title, "", ylabel)
    for i, (label, v) in enumerate(zip(labels, values)):
        h = max(0.0, (float(v) - y0) / (y1 - y0)) * ph
        x = LEFT + i * slot + 0.15 * slot
        parts.append(f'<rect class="bar" x="{_fmt(x)}" y="{_fmt(TOP + ph - h)}" '
                     f'width="{_fmt(0.7 * slot)}" height="{_fmt(h)}" fill="{COLORS[0]}"/>')
        cx = _fmt(LEFT + (i + 0.5) * slot)
        parts.append(f'<text class="bar-label" x="{cx}" y="{TOP + ph + 14}" text-anchor="middle" '
                     f'font-size="9">{escape(str(label))}</text>')
        parts.append(f'<text x="{cx}" y="{_fmt(TOP + ph - h - 4)}" text-anchor="middle" '
                     f'font-size="9">{float(v):.3f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def read_columns(path, *names):
    """Float columns from a CSV file; raises on a missing or empty file."""
    path = Path(path)
    if not path.is_file():
        raise RetinaFuseError(f"{path}: report not found")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise RetinaFuseError(f"{path}: report has no data rows")
    try:
        return [[float(r[n]) for r in rows] for n in names]
    except (KeyError, ValueError) as exc:
        raise RetinaFuseError(f"{path}: malformed report ({exc})") from exc


def ratio_label(w: float) -> str:
    return f"{round(100 * w)}%:{round(100 * (1 - w))}%"


def plot_curves(out_dir, roc=None, pr=None, loss=None, sweep=None) -> list:
    """Render every given report; returns the written SVG paths.

    All inputs are parsed before anything is written.
    """
    jobs = []
    if roc:
        fpr, tpr = read_columns(roc, "fpr", "tpr")
        jobs.append(("roc.svg", lambda p, a=fpr, b=tpr: line_plot(
            [(a, b, "ROC")], p, "ROC curve", "false positive rate", "true positive rate",
            (0, 1), (0, 1))))
    if pr:
        rec, prec = read_columns(pr, "recall", "precision")
        jobs.append(("pr.svg", lambda p, a=rec, b=prec: line_plot(
            [(a, b, "PR")], p, "Precision-recall curve", "recall", "precision",
            (0, 1), (0, 1))))
    if loss:
        ep, val = read_columns(loss, "epoch", "loss")
        jobs.append(("loss.svg", lambda p, a=ep, b=val: line_plot(
            [(a, b, "training loss")], p, "Segmentation training loss", "epoch", "loss")))
    if sweep:
        from .fusion import read_sweep_csv

        if not Path(sweep).is_file():
            raise RetinaFuseError(f"{sweep}: report not found")
        rows = read_sweep_csv(sweep)
        if not rows:
            raise RetinaFuseError(f"{sweep}: report has no data rows")
        kinds = {r.kernel for r in rows}
        labels = [ratio_label(r.hybrid_w) + (f" {r.kernel[:4]}" if len(kinds) > 1 else "")
                  for r in rows]
        vals = [r.val_accuracy for r in rows]
        jobs.append(("sweep.svg", lambda p, a=labels, b=vals: bar_chart(
            a, b, p, "Hybrid-ratio sweep (validation)", "accuracy")))
    if not jobs:
        raise RetinaFuseError("no reports given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fn in jobs:
        fn(out_dir / name)
        written.append(out_dir / name)
    return written
