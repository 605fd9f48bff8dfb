"""Per-frame forecast verification metrics and box-plot summaries.

Metrics operate on the normalized RGB frames (all pixels, all channels).  A
frame with constant truth has an undefined coefficient of determination; such
rows are reported with an empty field and excluded from distribution
summaries.  A secondary, clearly derived report converts the elevation
channel back to meters through the colormap decode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clips import HORIZON, Clip
from .encode import Colormap, ValueRange, VariableRanges
from .forecast import forecast_clip
from .model import SurgeForecastNet

_SST_FLOOR = 1e-12


@dataclass(frozen=True)
class FrameMetrics:
    """Error measures of one predicted frame against its ground truth."""

    clip_id: str
    region_id: str
    step: int  # forecast step, 1-based
    mse: float
    mae: float
    rmse: float
    r2: float  # NaN when the truth frame is constant

    @property
    def r2_defined(self) -> bool:
        return not math.isnan(self.r2)


@dataclass(frozen=True)
class BoxSummary:
    """Five-number box-plot summary of one metric at one forecast step.

    Quartiles use inclusive linear interpolation of order statistics;
    whiskers reach the most extreme data within 1.5 IQR of the box.
    """

    step: int
    metric: str
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    n: int


def frame_metrics(
    pred: np.ndarray,
    truth: np.ndarray,
    *,
    clip_id: str = "",
    region_id: str = "",
    step: int = 0,
) -> FrameMetrics:
    """MSE/MAE/RMSE/R^2 of one (3, H, W) frame pair, flattened over
    channels and pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    diff = pred - truth
    mse = float(np.mean(diff * diff))
    mae = float(np.mean(np.abs(diff)))
    sst = float(np.sum((truth - truth.mean()) ** 2))
    if sst < _SST_FLOOR:
        r2 = float("nan")
    else:
        r2 = 1.0 - float(np.sum(diff * diff)) / sst
    return FrameMetrics(
        clip_id=clip_id,
        region_id=region_id,
        step=step,
        mse=mse,
        mae=mae,
        rmse=math.sqrt(mse),
        r2=r2,
    )


def box_summary(values, *, step: int = 0, metric: str = "") -> BoxSummary:
    """Median/quartiles/whiskers of a non-empty list of scalars."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("box_summary needs at least one value")
    q1, median, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo_cut, hi_cut = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    whisker_lo = float(arr[arr >= lo_cut].min())
    whisker_hi = float(arr[arr <= hi_cut].max())
    return BoxSummary(
        step=step,
        metric=metric,
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        whisker_lo=whisker_lo,
        whisker_hi=whisker_hi,
        n=int(arr.size),
    )


METRIC_NAMES = ("mse", "rmse", "mae", "r2")


def summarize_steps(rows: list[FrameMetrics]) -> list[BoxSummary]:
    """Per-step box summaries for every metric; undefined R^2 rows drop out."""
    summaries = []
    steps = sorted({r.step for r in rows})
    for step in steps:
        at_step = [r for r in rows if r.step == step]
        for name in METRIC_NAMES:
            vals = [getattr(r, name) for r in at_step]
            if name == "r2":
                vals = [v for v in vals if not math.isnan(v)]
                if not vals:
                    continue
            summaries.append(box_summary(vals, step=step, metric=name))
    return summaries


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_metrics_csv(rows: list[FrameMetrics], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "region_id", "step", "mse", "rmse", "mae", "r2"])
        for r in rows:
            writer.writerow(
                [r.clip_id, r.region_id, r.step, repr(r.mse), repr(r.rmse), repr(r.mae),
                 _fmt(r.r2)]
            )


def write_summary_csv(summaries: list[BoxSummary], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "metric", "median", "q1", "q3", "whisker_lo", "whisker_hi", "n"]
        )
        for s in summaries:
            writer.writerow(
                [s.step, s.metric, repr(s.median), repr(s.q1), repr(s.q3),
                 repr(s.whisker_lo), repr(s.whisker_hi), s.n]
            )


def decode_to_meters(rgb_frames: np.ndarray, cmap: Colormap, zeta_range: ValueRange) -> np.ndarray:
    """Map (.., 3, H, W) RGB frames back to elevation in meters (derived view)."""
    arr = np.asarray(rgb_frames, dtype=np.float64)
    colors = np.moveaxis(arr, -3, -1)  # (..., H, W, 3)
    u = cmap.decode(colors)
    return zeta_range.lo + u * (zeta_range.hi - zeta_range.lo)


def evaluate_clip_rows(
    model: SurgeForecastNet,
    clip: Clip,
    clip_id: str,
    *,
    horizon: int = HORIZON,
) -> tuple[list[FrameMetrics], np.ndarray]:
    """Pure rollout on one clip; per-step metric rows plus the predictions."""
    preds = forecast_clip(model, clip.context, clip.future_wind, clip.bathymetry,
                          horizon=horizon)
    rows = [
        frame_metrics(
            preds[t],
            clip.target[t],
            clip_id=clip_id,
            region_id=clip.region_id,
            step=t + 1,
        )
        for t in range(horizon)
    ]
    return rows, preds


def evaluate_run(
    model: SurgeForecastNet,
    clip_iter,
    out_dir: str | Path,
    *,
    cmap: Colormap | None = None,
    ranges: VariableRanges | None = None,
) -> tuple[list[FrameMetrics], list[BoxSummary]]:
    """Evaluate clips with pure rollouts and emit the CSV reports.

    ``clip_iter`` yields (clip_id, Clip) pairs.  Writes ``metrics.csv`` and
    ``summary.csv``; when a colormap and ranges are given, also writes the
    derived ``metrics_meters.csv`` with elevation errors in meters.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[FrameMetrics] = []
    meter_rows: list[tuple[str, str, int, float, float]] = []
    n_clips = 0
    for clip_id, clip in clip_iter:
        n_clips += 1
        clip_rows, preds = evaluate_clip_rows(model, clip, clip_id)
        rows.extend(clip_rows)
        if cmap is not None and ranges is not None:
            pred_m = decode_to_meters(preds, cmap, ranges.zeta)
            truth_m = decode_to_meters(clip.target, cmap, ranges.zeta)
            err = pred_m - truth_m
            for t in range(err.shape[0]):
                meter_rows.append(
                    (
                        clip_id,
                        clip.region_id,
                        t + 1,
                        float(np.mean(np.abs(err[t]))),
                        float(np.sqrt(np.mean(err[t] ** 2))),
                    )
                )
    if n_clips == 0:
        raise ValueError("no clips to evaluate")

    summaries = summarize_steps(rows)
    write_metrics_csv(rows, out_dir / "metrics.csv")
    write_summary_csv(summaries, out_dir / "summary.csv")
    if meter_rows:
        with open(out_dir / "metrics_meters.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["clip_id", "region_id", "step", "mae_m", "rmse_m"])
            for row in meter_rows:
                writer.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4])])
    return rows, summaries
