"""Inference pipeline: zero fill, U-net, k-space correction, magnitude."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kspace import UndersampledKSpace, forward_dft, inverse_dft, zero_fill_recon
from .phantom import write_pgm, write_raw
from .unet import UNetWeights, unet_forward

__all__ = ["ReconResult", "kspace_correction", "reconstruct", "reconstruct_many", "save_result"]

STAGES = ("aliased", "unet", "corrected")


@dataclass(frozen=True)
class ReconResult:
    aliased: np.ndarray
    unet_output: np.ndarray
    corrected_kspace: np.ndarray
    final: np.ndarray

    def stage(self, name: str) -> np.ndarray:
        return {"aliased": self.aliased, "unet": self.unet_output, "corrected": self.final}[name]


def kspace_correction(predicted: np.ndarray, measured: UndersampledKSpace) -> np.ndarray:
    """Overwrite the measured lines of ``predicted`` with the measured data."""
    n = measured.mask.n
    if predicted.shape != (n, n):
        raise ValueError(f"predicted grid {predicted.shape} does not match mask size {n}")
    out = np.array(predicted, dtype=np.complex128, copy=True)
    out[measured.mask.rows] = measured.rows
    return out


def _finish(x: UndersampledKSpace, aliased: np.ndarray, unet_output: np.ndarray) -> ReconResult:
    unet_output = np.asarray(unet_output, dtype=np.float64)
    corrected = kspace_correction(forward_dft(unet_output), x)
    return ReconResult(aliased, unet_output, corrected, np.abs(inverse_dft(corrected)))


def reconstruct(x: UndersampledKSpace, weights: UNetWeights) -> ReconResult:
    if x.mask.n != weights.config.input_size:
        raise ValueError(f"mask size {x.mask.n} does not match network input {weights.config.input_size}")
    aliased = zero_fill_recon(x)
    return _finish(x, aliased, unet_forward(weights, aliased))


def reconstruct_many(xs: list[UndersampledKSpace], weights: UNetWeights, batch_size: int = 32) -> list[ReconResult]:
    """Same as calling :func:`reconstruct` on each item; the network runs in batches."""
    results = []
    for start in range(0, len(xs), batch_size):
        chunk = xs[start : start + batch_size]
        for x in chunk:
            if x.mask.n != weights.config.input_size:
                raise ValueError(f"mask size {x.mask.n} does not match network input {weights.config.input_size}")
        aliased = [zero_fill_recon(x) for x in chunk]
        outputs = unet_forward(weights, np.stack(aliased))
        results.extend(_finish(x, a, o) for x, a, o in zip(chunk, aliased, outputs))
    return results


def save_result(result: ReconResult, directory: str | Path, truth: np.ndarray | None = None, prefix: str = "") -> Path:
    """Write each stage as raw float32 and PGM, plus differences against ``truth``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index: dict = {"stages": {}, "differences": {}}
    images = {"aliased": result.aliased, "unet": result.unet_output, "corrected": result.final}
    if truth is not None:
        images = {"truth": truth, **images}
    for name, img in images.items():
        stem = f"{prefix}{name}"
        write_raw(img, directory / f"{stem}.f32")
        write_pgm(img, directory / f"{stem}.pgm")
        index["stages"][name] = {"raw": f"{stem}.f32", "pgm": f"{stem}.pgm"}
    if truth is not None:
        for name in STAGES:
            diff = result.stage(name) - truth
            stem = f"{prefix}{name}_minus_truth"
            write_raw(diff, directory / f"{stem}.f32")
            write_pgm(diff, directory / f"{stem}.pgm", vmin=-0.5, vmax=0.5)
            index["differences"][name] = {"raw": f"{stem}.f32", "pgm": f"{stem}.pgm"}
    index["n"] = int(result.final.shape[0])
    path = directory / f"{prefix}index.json"
    path.write_text(json.dumps(index, indent=2) + "\n")
    return path
