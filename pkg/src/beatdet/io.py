"""Annotation files, WAV audio and report writers.

All writers are deterministic: identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import wave
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import AnnotationError, BeatSequence

SCHEMA_VERSION = "1"
TARGET_SR = 22050
METRIC_HEADER = ["class", "f1", "cmlc", "cmlt", "amlc", "amlt"]
LOSS_HEADER = ["epoch", "cls", "reg", "lft", "total"]


class UnsupportedFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# .beats


def parse_beats(path) -> BeatSequence:
    """Read ``time [position]`` rows; ``#`` starts a comment line."""
    text = Path(path).read_text()
    return parse_beats_text(text, source=str(path))


def parse_beats_text(text: str, source: str = "<string>") -> BeatSequence:
    times: list[float] = []
    positions: list[int] = []
    has_pos: Optional[bool] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (1, 2):
            raise AnnotationError(f"{source}:{lineno}: expected 'time [position]', got {raw!r}")
        try:
            t = float(parts[0])
            p = int(float(parts[1])) if len(parts) == 2 else None
        except ValueError:
            raise AnnotationError(f"{source}:{lineno}: malformed row {raw!r}") from None
        if not math.isfinite(t) or t < 0:
            raise AnnotationError(f"{source}:{lineno}: invalid time {parts[0]!r}")
        if has_pos is None:
            has_pos = p is not None
        elif has_pos != (p is not None):
            raise AnnotationError(f"{source}:{lineno}: inconsistent column count")
        if p is not None and p < 1:
            raise AnnotationError(f"{source}:{lineno}: position must be >= 1")
        if times and t <= times[-1]:
            raise AnnotationError(f"{source}:{lineno}: times not strictly increasing")
        if times and t - times[-1] < 1e-3:
            raise AnnotationError(f"{source}:{lineno}: beat closer than 1 ms to previous")
        times.append(t)
        if p is not None:
            positions.append(p)
    return BeatSequence(np.asarray(times), np.asarray(positions) if has_pos else None)


def format_beats(seq: BeatSequence, header: Optional[str] = None) -> str:
    lines = []
    if header:
        lines.extend("# " + h for h in header.splitlines())
    pos = seq.inferred_positions()
    for i, t in enumerate(seq.times):
        lines.append(f"{t:.6f}\t{int(pos[i])}" if pos is not None else f"{t:.6f}")
    return "\n".join(lines) + "\n"


def write_beats(path, seq: BeatSequence, header: Optional[str] = None) -> None:
    Path(path).write_text(format_beats(seq, header))


# ---------------------------------------------------------------------------
# WAV


def read_wav(path, target_sr: int = TARGET_SR) -> tuple[np.ndarray, int]:
    """16-bit PCM WAV -> mono float64 in [-1, 1] resampled to ``target_sr``.

    Returns ``(samples, source_rate)``.
    """
    try:
        with wave.open(str(path), "rb") as w:
            nch = w.getnchannels()
            width = w.getsampwidth()
            sr = w.getframerate()
            if w.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"{path}: compressed WAV ({w.getcomptype()})")
            if width != 2:
                raise UnsupportedFormatError(f"{path}: only 16-bit PCM supported, got {8 * width}-bit")
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise UnsupportedFormatError(f"{path}: {e}") from None
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    x = x.reshape(-1, nch).mean(axis=1)
    return resample_linear(x, sr, target_sr), sr


def resample_linear(x: np.ndarray, sr: int, target_sr: int) -> np.ndarray:
    if sr == target_sr or x.size == 0:
        return x
    n_out = int(round(x.size * target_sr / sr))
    t_out = np.arange(n_out) * (sr / target_sr)
    return np.interp(t_out, np.arange(x.size), x)


def write_wav(path, samples: np.ndarray, sr: int = TARGET_SR) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sr)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# reports


def provenance_line(prov: Optional[dict]) -> str:
    if not prov:
        return ""
    return "provenance " + " ".join(f"{k}={prov[k]}" for k in sorted(prov))


def json_text(doc: dict, provenance: Optional[dict] = None) -> str:
    """JSON with the provenance block first, then the remaining keys sorted."""
    head = {"provenance": provenance or doc.get("provenance", {})}
    if "version" in doc:
        head["version"] = doc["version"]
    body = {k: doc[k] for k in sorted(doc) if k not in head}
    return json.dumps({**head, **body}, indent=2, default=_jsonable) + "\n"


def _csv_text(header: Sequence[str], rows: Iterable[Sequence], prov: Optional[dict]) -> str:
    buf = _io.StringIO()
    if prov:
        buf.write("# " + provenance_line(prov) + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return v


def _jsonable(v):
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    return v


def metric_rows(report) -> list[list]:
    rows = []
    for name in ("beat", "downbeat"):
        m = getattr(report, name)
        rows.append([name, *m.as_row()])
    return rows


def write_report(path, obj, fmt: Optional[str] = None, provenance: Optional[dict] = None) -> None:
    """Write a MetricReport, IoUHistogram or loss log (list of dicts).

    ``fmt`` defaults to the file suffix (csv, json or svg; svg only for histograms).
    """
    from .metrics import MetricReport
    from .thresholds import IoUHistogram

    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    if fmt not in ("csv", "json", "svg"):
        raise ValueError(f"unknown report format {fmt!r}")
    if isinstance(obj, MetricReport) or obj is None:
        text = _metric_report(obj, fmt, provenance)
    elif isinstance(obj, IoUHistogram):
        text = _histogram_report(obj, fmt, provenance)
    elif isinstance(obj, list):
        text = _loss_report(obj, fmt, provenance)
    else:
        raise TypeError(f"cannot write report for {type(obj).__name__}")
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e}") from e


def _metric_report(report, fmt: str, prov) -> str:
    if fmt == "svg":
        raise ValueError("svg output is only available for IoU histograms")
    rows = metric_rows(report) if report is not None else []
    if fmt == "csv":
        return _csv_text(METRIC_HEADER, rows, prov)
    doc = {"version": SCHEMA_VERSION, "provenance": prov or {}, "metrics": {}}
    for r in rows:
        doc["metrics"][r[0]] = {k: _jsonable(v) for k, v in zip(METRIC_HEADER[1:], r[1:])}
    if report is not None:
        doc["joint_f"] = _jsonable(report.joint_f)
    return json_text(doc)


def _histogram_report(hist, fmt: str, prov) -> str:
    from .geometry import IntervalClass

    iou_cols = [f"iou_{i / 10:.1f}_{(i + 1) / 10:.1f}" for i in range(10)]
    if fmt == "svg":
        return histogram_svg(hist, prov)
    rows = []
    for c in IntervalClass:
        mass = hist.mass(c)
        for b, (lo, hi) in enumerate(hist.confidence_bins):
            rows.append([c.name.lower(), f"{lo:g}", f"{hi:g}", int(hist.counts[c][b].sum()), *map(float, mass[b])])
    if fmt == "csv":
        return _csv_text(["class", "conf_low", "conf_high", "count", *iou_cols], rows, prov)
    doc = {
        "version": SCHEMA_VERSION,
        "provenance": prov or {},
        "confidence_edges": list(hist.confidence_edges),
        "counts": {c.name.lower(): hist.counts[c].tolist() for c in IntervalClass},
    }
    return json_text(doc)


def _loss_report(log: list[dict], fmt: str, prov) -> str:
    if fmt == "svg":
        raise ValueError("svg output is only available for IoU histograms")
    if fmt == "csv":
        extra = sorted({k for row in log for k in row} - set(LOSS_HEADER))
        header = LOSS_HEADER + extra
        return _csv_text(header, ([row.get(k, "") for k in header] for row in log), prov)
    doc = {"version": SCHEMA_VERSION, "provenance": prov or {}, "log": [_clean(r) for r in log]}
    return json_text(doc)


def _clean(row: dict) -> dict:
    return {k: _jsonable(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in row.items()}


def histogram_svg(hist, prov: Optional[dict] = None) -> str:
    """Small multiples: one row per class, one panel per confidence bin."""
    from .geometry import IntervalClass

    bins = hist.confidence_bins
    pw, ph, pad, top = 90, 70, 12, 24
    width = pad + len(bins) * (pw + pad)
    height = top + 2 * (ph + top) + pad
    fills = {IntervalClass.BEAT: "#9bb7e8", IntervalClass.DOWNBEAT: "#e89b9b"}
    out = [f"<!-- {provenance_line(prov)} -->"] if prov else []
    out += [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="9">'
    ]
    for row, c in enumerate(IntervalClass):
        mass = hist.mass(c)
        y0 = top + row * (ph + top)
        for b, (lo, hi) in enumerate(bins):
            x0 = pad + b * (pw + pad)
            out.append(f'<text x="{x0 + pw / 2:.1f}" y="{y0 - 4}" text-anchor="middle">{lo:g} - {hi:g}</text>')
            out.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>')
            peak = max(float(mass[b].max()), 1e-12)
            bw = pw / mass.shape[1]
            for k, m in enumerate(mass[b]):
                h = ph * float(m) / peak if m > 0 else 0.0
                out.append(
                    f'<rect x="{x0 + k * bw:.2f}" y="{y0 + ph - h:.2f}" width="{bw * 0.8:.2f}" '
                    f'height="{h:.2f}" fill="{fills[c]}" stroke="#000" stroke-width="0.3"/>'
                )
        out.append(f'<text x="2" y="{y0 + ph / 2:.1f}" transform="rotate(-90 2 {y0 + ph / 2:.1f})" '
                   f'text-anchor="middle" dy="8">{c.name.lower()}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# targets


def targets_to_dict(ts, provenance: Optional[dict] = None) -> dict:
    cfg = ts.grid.cfg
    levels = []
    for li, t in enumerate(ts.levels):
        pos = ts.grid.positions[li]
        anchors = []
        for i in np.flatnonzero(t.cls.any(axis=1)):
            anchors.append(
                {
                    "index": int(i),
                    "position": round(float(pos[i]), 9),
                    "cls": [int(v) for v in t.cls[i]],
                    "reg": [round(float(v), 9) for v in t.reg[i]],
                    "leftness": round(float(t.quality[i]), 9),
                    "matched_interval": int(t.matched[i]),
                }
            )
        levels.append(
            {
                "level": cfg.base_level + li,
                "stride_samples": cfg.stride(li),
                "num_anchors": int(len(pos)),
                "positive": anchors,
            }
        )
    return {
        "version": SCHEMA_VERSION,
        "provenance": provenance or {},
        "track_len": ts.grid.track_len,
        "level_config": cfg.to_dict(),
        "quality": ts.quality_mode,
        "intervals": [
            {"left": iv.left, "right": iv.right, "class": iv.cls.name.lower()} for iv in ts.intervals
        ],
        "levels": levels,
    }
