"""Experiments built from the toolkit: separability pairs, training cells, sweeps."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .kspace import SamplingMask, build_mask, kspace_from_image, reduction_factor, zero_fill_recon
from .metrics import MetricsReport, evaluate
from .phantom import PhantomSpec, render_phantom, separability_spec, shift_anomalies
from .reconstruction import ReconResult, reconstruct_many
from .training import TrainConfig, TrainState, make_training_pairs, train
from .unet import UNetConfig

__all__ = [
    "CellResult",
    "FIG5_RHOS",
    "FIG6_LOW_LINES",
    "ambiguity_ratio",
    "anomaly_support",
    "clip_low_lines",
    "run_cell",
    "separability_pair",
    "separability_report",
    "shifted_pairs",
    "sweep_cells",
]

log = logging.getLogger(__name__)

# Appendix sweep grids: L fixed at 12 while rho varies, rho fixed at 4 while L varies.
FIG5_RHOS = (1, 4, 5, 6, 8)
FIG5_LOW_LINES = 12
FIG6_RHO = 4
FIG6_LOW_LINES = (0, 1, 6, 8, 12)


def separability_pair(n: int, rho: int, spec: PhantomSpec | None = None):
    """Ground-truth pair whose anomalies sit ``n/rho`` rows apart."""
    spec = spec or separability_spec()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        moved = shift_anomalies(spec, Fraction(1, rho))
    return render_phantom(spec, n), render_phantom(moved, n)


def separability_report(n: int, rho: int, low_lines: int) -> dict:
    """l2 distance between the zero-filled images of a shifted-anomaly pair.

    Reported for ``L = 0`` (uniform lines only) and for ``low_lines``.
    """
    y1, y2 = separability_pair(n, rho)
    out = {"n": n, "rho": rho, "truth_distance": float(np.linalg.norm(y1 - y2)), "cells": []}
    for L in sorted({0, low_lines}):
        mask = build_mask(n, rho, L)
        a1 = zero_fill_recon(kspace_from_image(y1, mask))
        a2 = zero_fill_recon(kspace_from_image(y2, mask))
        out["cells"].append(
            {"low_lines": L, "lines": len(mask.lines), "distance": float(np.linalg.norm(a1 - a2)), "images": (a1, a2)}
        )
    out["truth"] = (y1, y2)
    return out


def clip_low_lines(n: int, rho: int, low_lines: int) -> int:
    """Largest usable L for (n, rho), warning when ``low_lines`` had to be reduced."""
    available = n - n // rho
    if low_lines > available:
        warnings.warn(f"rho={rho} leaves only {available} unmeasured lines; using L={available} instead of {low_lines}")
        return available
    return low_lines


@dataclass
class CellResult:
    mask: SamplingMask
    state: TrainState
    results: list[ReconResult]
    report: MetricsReport

    @property
    def reduction_factor(self) -> float:
        return reduction_factor(self.mask)


def run_cell(
    train_images,
    test_images,
    rho: int,
    low_lines: int,
    train_config: TrainConfig,
    unet_config: UNetConfig,
) -> CellResult:
    """Train on ``train_images`` under one sampling mask, evaluate on ``test_images``."""
    mask = build_mask(unet_config.input_size, rho, low_lines)
    log.info("cell rho=%d L=%d: %d lines, R=%.3f", rho, low_lines, len(mask.lines), reduction_factor(mask))
    state = train(make_training_pairs(train_images, mask), train_config, unet_config)
    results = reconstruct_many([kspace_from_image(y, mask) for y in test_images], state.weights)
    return CellResult(mask, state, results, evaluate(results, test_images))


def sweep_cells(n: int, rhos=FIG5_RHOS, low_lines=FIG6_LOW_LINES) -> list[tuple[int, int]]:
    """Unique (rho, L) cells of both appendix sweeps; cells with rho not dividing n are dropped."""
    cells = [(r, FIG5_LOW_LINES) for r in rhos] + [(FIG6_RHO, L) for L in low_lines]
    out = []
    for rho, L in cells:
        if n % rho:
            warnings.warn(f"skipping cell rho={rho}, L={L}: rho does not divide n={n}")
            continue
        cell = (rho, clip_low_lines(n, rho, L))
        if cell not in out:
            out.append(cell)
    return out


def anomaly_support(spec: PhantomSpec, n: int) -> np.ndarray:
    """Pixels covered by any anomaly of ``spec``."""
    only = PhantomSpec((), tuple(a.__class__(a.center, a.semi_axes, a.angle, 1.0) for a in spec.anomalies))
    return render_phantom(only, n) > 0


def shifted_pairs(specs, n: int, rho: int):
    """(image, partner, support) for every spec with anomalies.

    The partner has its anomalies moved by ``n/rho`` rows; ``support`` covers
    the anomaly pixels of both.
    """
    pairs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for spec in specs:
            if not spec.anomalies:
                continue
            moved = shift_anomalies(spec, Fraction(1, rho))
            support = anomaly_support(spec, n) | anomaly_support(moved, n)
            pairs.append((render_phantom(spec, n), render_phantom(moved, n), support))
    return pairs


def ambiguity_ratio(pairs, weights, mask: SamplingMask) -> dict:
    """Corrected vs aliased squared error on the anomaly pixels of shifted pairs.

    Both members of each pair are reconstructed; errors are pooled over the
    union of their anomaly supports. A ratio near 1 means the pipeline cannot
    tell where the anomaly is.
    """
    truths, supports = [], []
    for y1, y2, support in pairs:
        truths += [y1, y2]
        supports += [support, support]
    results = reconstruct_many([kspace_from_image(y, mask) for y in truths], weights)
    sums = {"aliased": 0.0, "unet": 0.0, "corrected": 0.0}
    count = 0
    for res, y, s in zip(results, truths, supports):
        for stage in sums:
            sums[stage] += float(np.sum((res.stage(stage)[s] - y[s]) ** 2))
        count += int(s.sum())
    out = {f"{k}_mse": v / max(count, 1) for k, v in sums.items()}
    out["pixels"] = count
    out["pairs"] = len(pairs)
    out["ratio"] = sums["corrected"] / sums["aliased"] if sums["aliased"] else float("nan")
    return out
