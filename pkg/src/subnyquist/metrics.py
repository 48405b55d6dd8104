"""MSE and SSIM, and per-stage evaluation reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

__all__ = ["MetricsReport", "MetricRow", "evaluate", "gaussian_window", "mse", "ssim"]

STAGES = ("aliased", "unet", "corrected")

# Wang et al. (2004) reference settings
WINDOW = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    r = len(taps) // 2
    out = correlate1d(correlate1d(img, taps, axis=0, mode="constant"), taps, axis=1, mode="constant")
    return out[r:-r, r:-r] if r else out


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM at every position where the full window fits."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < WINDOW:
        raise ValueError(f"images must be 2-D and at least {WINDOW}x{WINDOW}, got {a.shape}")
    taps = gaussian_window()
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a**2
    var_b = _filter_valid(b * b, taps) - mu_b**2
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03."""
    return float(np.mean(ssim_map(a, b, data_range)))


@dataclass(frozen=True)
class MetricRow:
    image_id: int
    stage: str
    mse: float
    ssim: float


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)

    def values(self, stage: str, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.rows if r.stage == stage])

    def aggregate(self) -> dict:
        """Mean and sample std (ddof=1) per stage; NaN where undefined."""
        out = {}
        for stage in STAGES:
            entry = {"count": int(len(self.values(stage, "mse")))}
            for metric in ("mse", "ssim"):
                v = self.values(stage, metric)
                entry[f"{metric}_mean"] = float(v.mean()) if v.size else math.nan
                entry[f"{metric}_std"] = float(v.std(ddof=1)) if v.size > 1 else math.nan
            out[stage] = entry
        return out

    def mean(self, stage: str, metric: str) -> float:
        return self.aggregate()[stage][f"{metric}_mean"]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_id", "stage", "mse", "ssim"])
            for r in self.rows:
                w.writerow([r.image_id, r.stage, repr(r.mse), repr(r.ssim)])

    def write_json(self, path: str | Path) -> None:
        agg = self.aggregate()
        doc = {
            "spread": "sample standard deviation over images (ddof=1)",
            "columns": list(STAGES),
            "aggregates": {s: {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in e.items()} for s, e in agg.items()},
            "empty": not self.rows,
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    def table(self) -> str:
        """Aggregates laid out as MSE/SSIM rows by stage columns."""
        agg = self.aggregate()
        head = f"{'':6s}" + "".join(f"{s:>26s}" for s in STAGES)
        lines = [head]
        for metric in ("mse", "ssim"):
            cells = "".join(f"{agg[s][metric + '_mean']:>14.4g} ± {agg[s][metric + '_std']:<9.2g}" for s in STAGES)
            lines.append(f"{metric.upper():6s}{cells}")
        return "\n".join(lines)


def evaluate(results, truths) -> MetricsReport:
    """Per-image MSE and SSIM of the aliased, U-net and corrected stages."""
    if len(results) != len(truths):
        raise ValueError(f"{len(results)} results but {len(truths)} ground-truth images")
    report = MetricsReport()
    for i, (res, truth) in enumerate(zip(results, truths)):
        for stage in STAGES:
            img = res.stage(stage)
            report.rows.append(MetricRow(i, stage, mse(img, truth), ssim(img, truth)))
    return report
