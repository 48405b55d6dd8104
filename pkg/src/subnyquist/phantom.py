"""Ellipse phantoms used as ground truth.

Coordinates are normalized to ``[-1, 1]`` on both axes with the row
coordinate increasing downwards (image order). Pixel ``i`` of an ``n``-pixel
axis has its center at ``-1 + (2i + 1)/n``. A pixel belongs to an ellipse when
its center lies inside it; there is no antialiasing.

Anomalies live on the periodic grid the DFT implies: their vertical distance
is measured cyclically, so an anomaly pushed past the bottom edge reappears
at the top. This keeps a shift of ``n/rho`` rows an exact pixel shift.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

__all__ = [
    "AnomalyOverlapWarning",
    "Dataset",
    "Ellipse",
    "PhantomSpec",
    "SHEPP_LOGAN",
    "anomaly_overlaps_boundary",
    "build_dataset",
    "generate_dataset",
    "generate_shepp_logan",
    "generate_specs",
    "load_dataset",
    "pixel_centers",
    "read_pgm",
    "read_raw",
    "render_phantom",
    "save_dataset",
    "separability_spec",
    "shift_anomalies",
    "write_pgm",
    "write_raw",
]


class AnomalyOverlapWarning(UserWarning):
    """A shifted anomaly straddles the boundary of a base structure."""


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    angle: float = 0.0
    intensity: float = 1.0

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "semi_axes": list(self.semi_axes),
            "angle": self.angle,
            "intensity": self.intensity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipse":
        return cls(tuple(d["center"]), tuple(d["semi_axes"]), d["angle"], d["intensity"])


@dataclass(frozen=True)
class PhantomSpec:
    ellipses: tuple[Ellipse, ...] = ()
    anomalies: tuple[Ellipse, ...] = ()
    seed: int = 0

    def __post_init__(self):
        for a in self.anomalies:
            if max(a.semi_axes) > 0.1:
                raise ValueError(f"anomaly semi-axes must be <= 0.1, got {a.semi_axes}")

    def to_dict(self) -> dict:
        return {
            "ellipses": [e.to_dict() for e in self.ellipses],
            "anomalies": [a.to_dict() for a in self.anomalies],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(
            tuple(Ellipse.from_dict(e) for e in d["ellipses"]),
            tuple(Ellipse.from_dict(a) for a in d["anomalies"]),
            int(d.get("seed", 0)),
        )


# (row, col), (semi-axis along col, semi-axis along row), angle [deg], intensity.
# Modified (high-contrast) Shepp-Logan values, with the vertical axis pointing down.
_SHEPP_LOGAN_TABLE = [
    ((0.0, 0.0), (0.69, 0.92), 0.0, 1.0),
    ((0.0184, 0.0), (0.6624, 0.874), 0.0, -0.8),
    ((0.0, 0.22), (0.11, 0.31), 18.0, -0.2),
    ((0.0, -0.22), (0.16, 0.41), -18.0, -0.2),
    ((-0.35, 0.0), (0.21, 0.25), 0.0, 0.1),
    ((-0.1, 0.0), (0.046, 0.046), 0.0, 0.1),
    ((0.1, 0.0), (0.046, 0.046), 0.0, 0.1),
    ((0.605, -0.08), (0.046, 0.023), 0.0, 0.1),
    ((0.606, 0.0), (0.023, 0.023), 0.0, 0.1),
    ((0.605, 0.06), (0.023, 0.046), 0.0, 0.1),
]

SHEPP_LOGAN: tuple[Ellipse, ...] = tuple(
    Ellipse(c, ax, float(np.deg2rad(ang)), val) for c, ax, ang, val in _SHEPP_LOGAN_TABLE
)


def _check_size(n: int, minimum: int = 2) -> None:
    if not isinstance(n, (int, np.integer)) or n < minimum or n % 2:
        raise ValueError(f"image size must be an even integer >= {minimum}, got {n!r}")


def pixel_centers(n: int) -> np.ndarray:
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def _wrap(t: np.ndarray | float):
    # map onto [-1, 1) with period 2
    return np.mod(np.asarray(t) + 1.0, 2.0) - 1.0


def _inside(e: Ellipse, rows: np.ndarray, cols: np.ndarray, cyclic: bool) -> np.ndarray:
    # rows and cols broadcast against each other
    dy = rows - e.center[0]
    if cyclic:
        dy = _wrap(dy)
    dx = cols - e.center[1]
    c, s = np.cos(e.angle), np.sin(e.angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    a, b = e.semi_axes
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_phantom(spec: PhantomSpec, n: int) -> np.ndarray:
    """Rasterize ``spec`` at ``n x n``: sum of ellipse intensities, clamped to [0, 1]."""
    _check_size(n)
    centers = pixel_centers(n)
    img = np.zeros((n, n), dtype=np.float64)
    rows, cols = centers[:, None], centers[None, :]
    for e in spec.ellipses:
        img[_inside(e, rows, cols, cyclic=False)] += e.intensity
    for a in spec.anomalies:
        img[_inside(a, rows, cols, cyclic=True)] += a.intensity
    return np.clip(img, 0.0, 1.0)


def generate_shepp_logan(n: int) -> np.ndarray:
    _check_size(n, minimum=16)
    return render_phantom(PhantomSpec(SHEPP_LOGAN), n)


def anomaly_overlaps_boundary(anomaly: Ellipse, ellipses, samples: int = 64) -> bool:
    """True if any base ellipse boundary crosses ``anomaly`` (checked on its rim)."""
    t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    a, b = anomaly.semi_axes
    c, s = np.cos(anomaly.angle), np.sin(anomaly.angle)
    u, v = a * np.cos(t), b * np.sin(t)
    rows = np.append(_wrap(anomaly.center[0] + u * s + v * c), _wrap(anomaly.center[0]))
    cols = np.append(anomaly.center[1] + u * c - v * s, anomaly.center[1])
    for e in ellipses:
        inside = _inside(e, rows, cols, cyclic=False)
        if inside.any() and not inside.all():
            return True
    return False


def shift_anomalies(spec: PhantomSpec, fraction) -> PhantomSpec:
    """Translate every anomaly down by ``fraction`` of the image height, wrapping cyclically.

    The image height is 2 in normalized units, so ``fraction = j/rho`` moves
    anomalies by exactly ``j * n / rho`` pixel rows. Emits
    :class:`AnomalyOverlapWarning` when a moved anomaly straddles a base
    structure; the pair is still a valid experiment.
    """
    step = 2.0 * float(Fraction(fraction).limit_denominator(1 << 20) % 1)
    if step == 0.0:
        return spec
    moved = []
    for a in spec.anomalies:
        row = float(_wrap(a.center[0] + step))
        moved.append(replace(a, center=(row, a.center[1])))
    out = replace(spec, anomalies=tuple(moved))
    flagged = [a for a in out.anomalies if anomaly_overlaps_boundary(a, spec.ellipses)]
    if flagged:
        warnings.warn(
            f"{len(flagged)} shifted anomal{'y' if len(flagged) == 1 else 'ies'} overlap base-structure boundaries",
            AnomalyOverlapWarning,
            stacklevel=2,
        )
    return out


def separability_spec(intensity: float = 0.4, radius: float = 0.05) -> PhantomSpec:
    """Shepp-Logan with three small anomalies on the row ``+0.5`` (lower half).

    Row ``+0.5`` and its mirror ``-0.5`` are half a period apart, so for
    ``rho = 2`` mirroring the anomalies is the same as shifting them by ``n/2``.
    """
    anomalies = tuple(Ellipse((0.5, col), (radius, radius), 0.0, intensity) for col in (-0.375, 0.0, 0.375))
    return PhantomSpec(SHEPP_LOGAN, anomalies, seed=0)


# -- random corpus ------------------------------------------------------------


def _random_spec(rng: np.random.Generator, seed: int) -> PhantomSpec:
    head_rows = rng.uniform(0.72, 0.9)
    head_cols = rng.uniform(0.58, 0.78)
    center = (rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05))
    angle = rng.uniform(-0.25, 0.25)
    skull = rng.uniform(0.03, 0.07)
    tissue = rng.uniform(0.15, 0.35)
    ellipses = [
        Ellipse(center, (head_cols, head_rows), angle, 1.0),
        Ellipse(center, (head_cols - skull, head_rows - skull), angle, tissue - 1.0),
    ]
    inner_rows, inner_cols = 0.6 * (head_rows - skull), 0.6 * (head_cols - skull)
    for _ in range(rng.integers(2, 6)):
        ellipses.append(
            Ellipse(
                (center[0] + rng.uniform(-inner_rows, inner_rows), center[1] + rng.uniform(-inner_cols, inner_cols)),
                (rng.uniform(0.04, 0.22), rng.uniform(0.04, 0.22)),
                rng.uniform(-np.pi, np.pi),
                rng.uniform(-tissue, 0.25),
            )
        )
    anomalies = []
    for _ in range(rng.integers(0, 4)):
        r = rng.uniform(0.025, 0.07)
        anomalies.append(
            Ellipse(
                (center[0] + rng.uniform(-inner_rows, inner_rows), center[1] + rng.uniform(-inner_cols, inner_cols)),
                (r, r * rng.uniform(0.7, 1.0)),
                rng.uniform(-np.pi, np.pi),
                rng.uniform(0.3, 0.5),
            )
        )
    return PhantomSpec(tuple(ellipses), tuple(anomalies), seed)


def generate_specs(count: int, seed: int) -> list[PhantomSpec]:
    """Per-image specs behind :func:`generate_dataset`; image ``i`` uses child seed ``(seed, i)``."""
    return [_random_spec(np.random.default_rng([seed, i]), seed) for i in range(count)]


def generate_dataset(count: int, n: int, seed: int) -> list[np.ndarray]:
    """Random head-like phantoms with 0-3 bright anomalies each."""
    _check_size(n)
    return [render_phantom(s, n) for s in generate_specs(count, seed)]


# -- persistence ------------------------------------------------------------------


def write_raw(image: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_raw(path: str | Path, n: int | None = None) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if n is None:
        n = int(round(np.sqrt(data.size)))
    if data.size != n * n:
        raise ValueError(f"{path}: {data.size} floats is not a {n}x{n} image")
    return data.reshape(n, n).astype(np.float64)


def write_pgm(image: np.ndarray, path: str | Path, vmin: float = 0.0, vmax: float = 1.0) -> None:
    """8-bit binary PGM, linearly mapping ``[vmin, vmax]`` to ``[0, 255]``."""
    scaled = np.clip((np.asarray(image, dtype=np.float64) - vmin) / (vmax - vmin), 0.0, 1.0)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    data = raw[m.end() : m.end() + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval


@dataclass
class Dataset:
    n: int
    seed: int
    images: list[np.ndarray]
    specs: list[PhantomSpec] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)


def save_dataset(dataset: Dataset, directory: str | Path) -> Path:
    """Write ``manifest.json`` plus one raw float32 file and one PGM per image."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, img in enumerate(dataset.images):
        name = f"img_{i:05d}.f32"
        write_raw(img, directory / name)
        write_pgm(img, directory / f"img_{i:05d}.pgm")
        files.append(name)
    manifest = {
        "count": len(dataset.images),
        "n": dataset.n,
        "seed": dataset.seed,
        "dtype": "float32-le",
        "layout": "row-major",
        "images": files,
        "specs": [s.to_dict() for s in dataset.specs],
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    n = int(manifest["n"])
    images = [read_raw(directory / name, n) for name in manifest["images"]]
    if len(images) != int(manifest["count"]):
        raise ValueError(f"manifest count {manifest['count']} != {len(images)} listed images")
    specs = [PhantomSpec.from_dict(d) for d in manifest.get("specs", [])]
    return Dataset(n=n, seed=int(manifest["seed"]), images=images, specs=specs)


def build_dataset(count: int, n: int, seed: int) -> Dataset:
    specs = generate_specs(count, seed)
    return Dataset(n=n, seed=seed, images=[render_phantom(s, n) for s in specs], specs=specs)
