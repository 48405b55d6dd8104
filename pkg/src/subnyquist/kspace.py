"""Cartesian k-space model: DFT pair, phase-encoding masks, zero filling.

Array layout
------------
Images and k-space grids are plain ``(N, N)`` numpy arrays. Axis 0 is the
vertical, phase-encoding direction; axis 1 is the fully sampled
frequency-encoding direction.

K-space grids are stored *centered*: array index ``i`` holds frequency
``i - N/2``, so the frequencies run over ``-N/2, ..., N/2 - 1``. Frequencies
are only defined modulo ``N``, so the Nyquist row ``-N/2`` is the same line
as ``+N/2``.

The transform is unitary (``norm="ortho"``): Parseval holds exactly and the
zero-filled inverse of undersampled data is the minimum-norm solution with
no extra constants. Under this scaling, uniform undersampling by ``rho``
produces the *average* of ``rho`` shifted image copies, see
:func:`predict_fold`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SamplingMask",
    "UndersampledKSpace",
    "build_mask",
    "centered_frequencies",
    "forward_dft",
    "inverse_dft",
    "kspace_from_image",
    "line_to_row",
    "load_kspace",
    "load_mask",
    "minimum_norm_solution",
    "predict_fold",
    "reduction_factor",
    "save_kspace",
    "save_mask",
    "subsample",
    "zero_fill_recon",
    "zero_pad",
]


def _check_square(a: np.ndarray, name: str = "input") -> int:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square 2-D array, got shape {a.shape}")
    return a.shape[0]


def centered_frequencies(n: int) -> np.ndarray:
    """Frequency label of every row/column of a centered grid of size ``n``."""
    return np.arange(n) - n // 2


def line_to_row(line: int, n: int) -> int:
    """Array row holding phase-encoding line ``line`` (taken modulo ``n``)."""
    return (line + n // 2) % n


def forward_dft(image: np.ndarray) -> np.ndarray:
    """Unitary centered 2-D DFT of a real or complex image."""
    _check_square(image, "image")
    return np.fft.fftshift(np.fft.fft2(image, norm="ortho"))


def inverse_dft(kspace: np.ndarray) -> np.ndarray:
    """Inverse of :func:`forward_dft`; always returns a complex image."""
    _check_square(kspace, "kspace")
    return np.fft.ifft2(np.fft.ifftshift(kspace), norm="ortho")


@dataclass(frozen=True)
class SamplingMask:
    """Set of measured phase-encoding lines.

    ``lines`` holds centered frequency labels in ``[-n/2, n/2)``, sorted
    ascending. Every frequency-encoding sample on a measured line is measured.
    """

    n: int
    rho: int
    low_lines: int
    lines: tuple[int, ...]

    @property
    def rows(self) -> np.ndarray:
        """Array rows of the measured lines, in mask order."""
        return np.array([line_to_row(b, self.n) for b in self.lines], dtype=np.intp)

    def row_mask(self) -> np.ndarray:
        """Boolean vector over grid rows, True where a line is measured."""
        m = np.zeros(self.n, dtype=bool)
        m[self.rows] = True
        return m

    def to_dict(self) -> dict:
        return {"n": self.n, "rho": self.rho, "low_lines": self.low_lines, "lines": list(self.lines)}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingMask":
        mask = build_mask(int(d["n"]), int(d["rho"]), int(d["low_lines"]))
        if "lines" in d and tuple(int(b) for b in d["lines"]) != mask.lines:
            raise ValueError("mask lines do not match (n, rho, low_lines)")
        return mask


def build_mask(n: int, rho: int, low_lines: int) -> SamplingMask:
    """Uniform lines ``b % rho == 0`` plus the ``low_lines`` unmeasured lines nearest ``b = 0``.

    Low-frequency lines are drawn only from lines the uniform pattern misses,
    so the mask always has exactly ``n // rho + low_lines`` lines. Ties in
    ``|b|`` go to the negative line first.
    """
    if n < 2 or n % 2:
        raise ValueError(f"grid size must be even and >= 2, got {n}")
    if rho < 1 or n % rho:
        raise ValueError(f"rho={rho} must be a positive divisor of n={n}")
    available = n - n // rho
    if low_lines < 0 or low_lines > available:
        raise ValueError(f"low_lines={low_lines} must lie in [0, {available}] for n={n}, rho={rho}")

    freqs = centered_frequencies(n)
    uniform = {int(b) for b in freqs if b % rho == 0}
    candidates = sorted((int(b) for b in freqs if int(b) not in uniform), key=lambda b: (abs(b), b))
    lines = uniform | set(candidates[:low_lines])
    return SamplingMask(n=n, rho=rho, low_lines=low_lines, lines=tuple(sorted(lines)))


def reduction_factor(mask: SamplingMask) -> float:
    return mask.n / len(mask.lines)


@dataclass(frozen=True)
class UndersampledKSpace:
    """Measured lines only, as a ``(len(mask.lines), n)`` complex array in mask order."""

    mask: SamplingMask
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (len(self.mask.lines), self.mask.n)
        if self.rows.shape != expected:
            raise ValueError(f"rows have shape {self.rows.shape}, mask needs {expected}")


def subsample(kspace: np.ndarray, mask: SamplingMask) -> UndersampledKSpace:
    n = _check_square(kspace, "kspace")
    if n != mask.n:
        raise ValueError(f"grid size {n} does not match mask size {mask.n}")
    return UndersampledKSpace(mask, kspace[mask.rows].astype(np.complex128, copy=True))


def zero_pad(x: UndersampledKSpace) -> np.ndarray:
    """Place the measured lines on a full grid, zeros elsewhere."""
    grid = np.zeros((x.mask.n, x.mask.n), dtype=np.complex128)
    grid[x.mask.rows] = x.rows
    return grid


def minimum_norm_solution(x: UndersampledKSpace) -> np.ndarray:
    """Smallest-l2 complex image consistent with ``x``.

    The unitary DFT is an isometry and zero padding is the smallest grid
    that agrees with ``x`` on the measured lines, so the inverse transform
    of the zero-padded data is the minimum-norm solution.
    """
    return inverse_dft(zero_pad(x))


def zero_fill_recon(x: UndersampledKSpace) -> np.ndarray:
    """Magnitude of the zero-filled inverse DFT (the aliased image)."""
    return np.abs(minimum_norm_solution(x))


def kspace_from_image(image: np.ndarray, mask: SamplingMask) -> UndersampledKSpace:
    return subsample(forward_dft(image), mask)


def predict_fold(image: np.ndarray, rho: int) -> np.ndarray:
    """Aliased image from uniform undersampling by ``rho`` along axis 0.

    Returns ``(1/rho) * sum_j image[m + j*N/rho, :]`` with cyclic wrap. This is
    computed directly in image space, independent of any FFT.
    """
    n = _check_square(image, "image")
    if rho < 1 or n % rho:
        raise ValueError(f"rho={rho} must be a positive divisor of n={n}")
    step = n // rho
    acc = np.zeros_like(image, dtype=np.result_type(image.dtype, np.float64))
    for j in range(rho):
        acc += np.roll(image, -j * step, axis=0)
    return acc / rho


# -- serialization ----------------------------------------------------------


def save_mask(mask: SamplingMask, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mask.to_dict(), indent=2) + "\n")


def load_mask(path: str | Path) -> SamplingMask:
    return SamplingMask.from_dict(json.loads(Path(path).read_text()))


def save_kspace(x: UndersampledKSpace, path: str | Path) -> Path:
    """Write ``x`` as interleaved little-endian float32 (re, im) plus a JSON sidecar.

    ``path`` names the blob; the sidecar is ``path`` with ``.json`` appended
    and embeds the mask. Returns the sidecar path.
    """
    path = Path(path)
    blob = np.empty(x.rows.shape + (2,), dtype="<f4")
    blob[..., 0] = x.rows.real
    blob[..., 1] = x.rows.imag
    path.write_bytes(blob.tobytes(order="C"))
    sidecar = path.with_name(path.name + ".json")
    meta = {"blob": path.name, "shape": list(x.rows.shape), "dtype": "complex64-le-interleaved", "mask": x.mask.to_dict()}
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    return sidecar


def load_kspace(sidecar: str | Path) -> UndersampledKSpace:
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text())
    mask = SamplingMask.from_dict(meta["mask"])
    shape = tuple(meta["shape"])
    raw = np.frombuffer((sidecar.parent / meta["blob"]).read_bytes(), dtype="<f4")
    if raw.size != 2 * shape[0] * shape[1]:
        raise ValueError(f"k-space blob has {raw.size} floats, sidecar expects {2 * shape[0] * shape[1]}")
    raw = raw.reshape(shape + (2,)).astype(np.float64)
    return UndersampledKSpace(mask, raw[..., 0] + 1j * raw[..., 1])
