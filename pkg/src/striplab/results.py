"""Persisted outputs: JSON-lines records, CSV tables and SVG line plots."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from html import escape
from pathlib import Path

import numpy as np

from .model import SCHEMA_VERSION

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def to_jsonable(obj):
    """Plain-JSON view of numpy scalars/arrays; non-finite floats become ``null``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(record):
    """Canonical single-line JSON (sorted keys, compact separators)."""
    return json.dumps(to_jsonable(record), sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class ResultsStore:
    """Append-only JSON-lines file; every record gets ``schema_version`` and ``config_hash``.

    Used as a single writer: callers hand records over in task order.
    """

    def __init__(self, path, config_hash=""):
        self.path = Path(path)
        self.config_hash = config_hash
        self._lines = []

    def append(self, record):
        rec = dict(record)
        rec.setdefault("schema_version", SCHEMA_VERSION)
        rec.setdefault("config_hash", self.config_hash)
        line = dumps(rec)
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(line + "\n")
        self._lines.append(line)
        return line

    @property
    def line_checksums(self):
        return [sha256_text(line) for line in self._lines]

    @staticmethod
    def read(path):
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


def write_csv(path, header, rows):
    """RFC-4180 table (CRLF line endings, minimal quoting)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else _fmt(v) for v in to_jsonable(list(row))])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# --------------------------------------------------------------------------
# SVG


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def svg_line_plot(path, series, title="", xlabel="", ylabel="", logy=False, width=640, height=420):
    """Write a line plot of ``series = {name: (xs, ys)}`` as SVG.

    With ``logy`` the y axis shows ``log10`` of the values; non-positive and
    non-finite points are dropped.
    """
    margin = {"l": 70, "r": 150, "t": 40, "b": 55}
    pw, ph = width - margin["l"] - margin["r"], height - margin["t"] - margin["b"]
    cleaned = {}
    for name, (xs, ys) in series.items():
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        ok = np.isfinite(xs) & np.isfinite(ys)
        if logy:
            ok &= ys > 0
        xs, ys = xs[ok], ys[ok]
        cleaned[name] = (xs, np.log10(ys) if logy else ys)
    allx = np.concatenate([v[0] for v in cleaned.values()]) if cleaned else np.empty(0)
    ally = np.concatenate([v[1] for v in cleaned.values()]) if cleaned else np.empty(0)
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def X(v):
        return margin["l"] + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return margin["t"] + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{escape(title)}</text>',
        f'<rect x="{margin["l"]}" y="{margin["t"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _nice_ticks(x0, x1):
        out.append(f'<line x1="{X(t):.1f}" y1="{margin["t"] + ph}" x2="{X(t):.1f}" y2="{margin["t"] + ph + 5}" stroke="black"/>')
        out.append(
            f'<text x="{X(t):.1f}" y="{margin["t"] + ph + 18}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{t:g}</text>'
        )
    for t in _nice_ticks(y0, y1):
        label = f"1e{t:g}" if logy else f"{t:g}"
        out.append(f'<line x1="{margin["l"] - 5}" y1="{Y(t):.1f}" x2="{margin["l"]}" y2="{Y(t):.1f}" stroke="black"/>')
        out.append(
            f'<text x="{margin["l"] - 8}" y="{Y(t) + 4:.1f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{label}</text>'
        )
    out.append(
        f'<text x="{margin["l"] + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{escape(xlabel)}</text>'
    )
    ylab = f"{ylabel} (log scale)" if logy else ylabel
    out.append(
        f'<text x="16" y="{margin["t"] + ph / 2:.1f}" text-anchor="middle" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 16 {margin["t"] + ph / 2:.1f})">{escape(ylab)}</text>'
    )
    for k, (name, (xs, ys)) in enumerate(cleaned.items()):
        color = _PALETTE[k % len(_PALETTE)]
        if xs.size:
            pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(xs, ys))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            for a, b in zip(xs, ys):
                out.append(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="2.5" fill="{color}"/>')
        ly = margin["t"] + 14 + 18 * k
        lx = margin["l"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="11" font-family="sans-serif">{escape(str(name))}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def plot_from_csv(csv_path, svg_path, x_column, y_columns, group_column=None, **kw):
    """Plot columns of a CSV written by :func:`write_csv`."""
    header, rows = read_csv(csv_path)
    xi = header.index(x_column)
    series = {}
    for ycol in y_columns:
        yi = header.index(ycol)
        if group_column is None:
            series[ycol] = ([_num(r[xi]) for r in rows], [_num(r[yi]) for r in rows])
        else:
            gi = header.index(group_column)
            for r in rows:
                key = f"{ycol} {group_column}={r[gi]}" if len(y_columns) > 1 else f"{group_column}={r[gi]}"
                xs, ys = series.setdefault(key, ([], []))
                xs.append(_num(r[xi]))
                ys.append(_num(r[yi]))
    svg_line_plot(svg_path, series, **kw)


def _num(s):
    try:
        return float(s)
    except ValueError:
        return float("nan")
