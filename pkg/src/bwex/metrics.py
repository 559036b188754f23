"""SNR and log-spectral distance, multi-method evaluation and report rendering."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from bwex import dsp
from bwex.errors import BwexError, DomainError, LengthError

LSD_FRAME = 2048
METHODS = ("spline", "dnn", "model")

# Reference values (dB) as published: task -> r -> method -> (SNR, LSD).
# None marks cells the published table leaves as "n/a".
PAPER_TABLE2 = {
    "SingleSpeaker": {
        2: {"spline": (20.3, 4.5), "dnn": (20.1, 3.7), "model": (21.1, 3.2)},
        4: {"spline": (14.8, 8.2), "dnn": (15.9, 4.9), "model": (17.1, 3.6)},
        6: {"spline": (10.4, 10.3), "dnn": None, "model": (14.4, 3.4)},
    },
    "MultiSpeaker": {
        2: {"spline": (19.7, 4.4), "dnn": (19.9, 3.6), "model": (20.7, 3.1)},
        4: {"spline": (13.0, 8.0), "dnn": (14.9, 5.8), "model": (16.1, 3.5)},
        6: {"spline": (9.1, 10.1), "dnn": None, "model": (10.0, 3.7)},
    },
    "Piano": {
        2: {"spline": (29.4, 3.5), "dnn": (29.3, 3.4), "model": (30.1, 3.4)},
        4: {"spline": (22.2, 5.8), "dnn": (23.0, 5.2), "model": (23.5, 3.6)},
        6: {"spline": (15.4, 7.3), "dnn": None, "model": (16.1, 4.4)},
    },
}
# (train LPF, test LPF) -> (SNR, LSD), Piano at r=2.
PAPER_TABLE3 = {
    (True, True): (30.1, 3.4), (True, False): (0.42, 4.5),
    (False, True): (0.43, 4.4), (False, False): (33.2, 3.3),
}


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise LengthError(f"approximation has {x.size} samples, reference has {y.size}")
    return x, y


def snr(x, y) -> float:
    """``10 log10(||y||^2 / ||x - y||^2)`` in dB for approximation ``x`` of reference ``y``."""
    x, y = _pair(x, y)
    ref = float(np.dot(y, y))
    if ref == 0.0:
        raise DomainError("SNR is undefined for an all-zero reference")
    err = float(np.dot(x - y, x - y))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(ref / err)


def lsd(x, y, frame_length: int = LSD_FRAME) -> float:
    """Per-frame RMS difference of log10 power spectra, averaged over frames.

    Frames are non-overlapping Hann windows of ``frame_length`` samples.
    """
    x, y = _pair(x, y)
    if x.size < frame_length:
        raise LengthError(f"LSD needs at least {frame_length} samples, got {x.size}")
    px = dsp.log_power(dsp.stft(x, frame_length, hop=frame_length))
    py = dsp.log_power(dsp.stft(y, frame_length, hop=frame_length))
    return float(np.mean(np.sqrt(np.mean((py - px) ** 2, axis=1))))


def format_db(v: float | None, digits: int = 2) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.{digits}f}"


@dataclass
class TrackResult:
    track: str
    method: str
    snr: float | None
    lsd: float | None
    error: str | None = None


@dataclass
class EvalRow:
    task: str
    r: int
    method: str
    snr: float | None
    lsd: float | None
    tracks: int
    skipped_inf: int = 0
    error: str | None = None


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    detail: list[TrackResult] = field(default_factory=list)
    grid: dict | None = None
    paper_task: str | None = None

    def row(self, method: str) -> EvalRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_text(self) -> str:
        lines = []
        refs = PAPER_TABLE2.get(self.paper_task) if self.paper_task else None
        head = f"{'task':<14}{'r':>3}  {'method':<8}{'SNR':>9}{'LSD':>9}{'tracks':>8}"
        if refs:
            head += f"   published {self.paper_task}: SNR / LSD"
        lines.append(head)
        footnote = False
        for row in self.rows:
            line = (f"{row.task:<14}{row.r:>3}  {row.method:<8}{format_db(row.snr):>9}"
                    f"{format_db(row.lsd):>9}{row.tracks:>8}")
            if row.skipped_inf:
                line += " *"
                footnote = True
            if refs and row.r in refs:
                ref = refs[row.r].get(row.method)
                line += f"   {format_db(ref[0], 1)} / {format_db(ref[1], 1)}" if ref else "   n/a"
            if row.error:
                line += f"   ({row.error})"
            lines.append(line)
        if footnote:
            lines.append("* aggregate skips tracks with infinite SNR")
        if self.grid:
            lines.append("")
            lines.append("LPF grid (rows: train filter, columns: test filter), SNR / LSD")
            lines.append(f"{'':<12}{'LPF test':>18}{'no-LPF test':>18}")
            for train_lpf in (True, False):
                cells = []
                for test_lpf in (True, False):
                    s, d = self.grid.get((train_lpf, test_lpf), (None, None))
                    cells.append(f"{format_db(s)} / {format_db(d)}")
                label = "LPF train" if train_lpf else "no-LPF train"
                lines.append(f"{label:<12}{cells[0]:>18}{cells[1]:>18}")
            if self.paper_task:
                lines.append("published (Piano, r=2): LPF train 30.1/3.4 | 0.42/4.5; no-LPF train 0.43/4.4 | 33.2/3.3")
        lines.append("")
        lines.append("per-track detail")
        for t in self.detail:
            extra = f"  ({t.error})" if t.error else ""
            lines.append(f"  {t.track:<28}{t.method:<8}{format_db(t.snr):>9}{format_db(t.lsd):>9}{extra}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "r", "method", "snr_db", "lsd", "tracks", "error"])
        for row in self.rows:
            w.writerow([row.task, row.r, row.method, format_db(row.snr, 6), format_db(row.lsd, 6),
                        row.tracks, row.error or ""])
        return buf.getvalue()


Method = Callable[[np.ndarray], np.ndarray]


def evaluate(methods: Mapping[str, Method], tracks: Mapping[str, np.ndarray], r: int,
             use_lpf_test: bool = True, task: str = "desk") -> EvalReport:
    """Score each method on every track.

    A method maps the spline-upscaled degraded input to an estimate of the
    original. Methods that raise produce an error row and the run continues.
    """
    report = EvalReport()
    names = sorted(tracks)
    inputs = {n: dsp.degrade(tracks[n], r, use_lpf_test) for n in names}
    for method, fn in methods.items():
        snrs, lsds, errors = [], [], []
        for n in names:
            try:
                est = fn(inputs[n])
                s, d = snr(est, tracks[n]), lsd(est, tracks[n])
                report.detail.append(TrackResult(n, method, s, d))
                snrs.append(s)
                lsds.append(d)
            except BwexError as exc:
                report.detail.append(TrackResult(n, method, None, None, str(exc)))
                errors.append(str(exc))
        finite = [s for s in snrs if math.isfinite(s)]
        report.rows.append(EvalRow(
            task, r, method,
            float(np.mean(finite)) if finite else (math.inf if snrs else None),
            float(np.mean(lsds)) if lsds else None,
            len(snrs), len(snrs) - len(finite),
            errors[0] if errors else None,
        ))
    return report


def lpf_grid(models: Mapping[bool, Method], tracks: Mapping[str, np.ndarray], r: int) -> dict:
    """``(train_lpf, test_lpf) -> (mean SNR, mean LSD)`` for models trained with and without the filter."""
    grid = {}
    for train_lpf, fn in models.items():
        for test_lpf in (True, False):
            rep = evaluate({"model": fn}, tracks, r, use_lpf_test=test_lpf)
            row = rep.rows[0]
            grid[(train_lpf, test_lpf)] = (row.snr, row.lsd)
    return grid


def spectrogram_dump(samples: np.ndarray, out_path, frame_length: int = LSD_FRAME,
                     hop: int | None = None) -> np.ndarray:
    """Write a log-power spectrogram as ``<out>.csv`` (frames x bins) and a PGM image.

    Values are dB relative to a full-scale sine, clipped to [-100, 0]; the image
    maps -100 dB to black and 0 dB to white with time left to right and
    frequency increasing upwards.
    """
    samples = np.asarray(samples, dtype=np.float64)
    spec = dsp.stft(samples, frame_length, hop)
    gain = np.sum(dsp.make_window(spec.window, frame_length)) / 2.0
    db = 10.0 * (dsp.log_power(spec) - 2.0 * np.log10(gain))
    db = np.clip(db, -100.0, 0.0)
    out_path = Path(out_path)
    np.savetxt(out_path.with_suffix(".csv"), db, delimiter=",", fmt="%.4f")
    pixels = np.round((db.T[::-1] + 100.0) * 2.55).astype(np.uint8)
    h, w = pixels.shape
    with open(out_path.with_suffix(".pgm") if out_path.suffix != ".pgm" else out_path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return db
