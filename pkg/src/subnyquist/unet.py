"""A small U-net in plain numpy, with hand-written backpropagation.

Feature maps are channels-last batches, ``(batch, height, width, channels)``:
convolutions then become a single ``(pixels, 9*C_in) @ (9*C_in, C_out)`` GEMM,
which is several times faster than the channels-first layout on CPU BLAS.
Kernels are stored as ``(C_out, C_in, kh, kw)``.

Architecture for ``depth = D`` and ``base_channels = C``::

    enc0: conv3x3(1 -> C), relu, conv3x3(C -> C), relu       --- skip0 --+
    maxpool 2x2                                                           |
    enc1: conv3x3(C -> 2C), relu, conv3x3(2C -> 2C), relu    --- skip1 -+ |
    ...                                                                 | |
    encD: conv3x3(.. -> 2^D C), relu, conv3x3, relu  (bottom)           | |
    dec(D-1): unpool, concat(skip, up), conv3x3 -> 2^(D-1) C, relu x2 <-+ |
    ...                                                                   |
    dec0: unpool, concat(skip0, up), conv3x3 -> C, relu x2  <-------------+
    out: conv1x1(C -> 1), no activation

No layer has a bias.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "UNetConfig",
    "UNetWeights",
    "avg_unpool2x2",
    "avg_unpool2x2_backward",
    "concat_channels",
    "conv2d_backward",
    "conv2d_forward",
    "init_weights",
    "load_weights",
    "maxpool2x2",
    "maxpool2x2_backward",
    "relu",
    "relu_backward",
    "save_weights",
    "unet_backward",
    "unet_forward",
]

INIT_STD = 0.01


@dataclass(frozen=True)
class UNetConfig:
    input_size: int = 64
    depth: int = 3
    base_channels: int = 16
    convs_per_block: int = 2

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.convs_per_block != 2:
            raise ValueError("convs_per_block is fixed at 2")
        if self.input_size % (1 << self.depth):
            raise ValueError(f"input_size {self.input_size} is not divisible by 2**depth = {1 << self.depth}")

    def channels(self, level: int) -> int:
        return self.base_channels << level

    def layer_shapes(self) -> dict[str, tuple[int, int, int, int]]:
        """Ordered kernel shapes, in forward-pass order."""
        shapes = {}
        c_in = 1
        for level in range(self.depth + 1):
            c = self.channels(level)
            shapes[f"enc{level}.conv1"] = (c, c_in, 3, 3)
            shapes[f"enc{level}.conv2"] = (c, c, 3, 3)
            c_in = c
        for level in reversed(range(self.depth)):
            c = self.channels(level)
            shapes[f"dec{level}.conv1"] = (c, c + c_in, 3, 3)
            shapes[f"dec{level}.conv2"] = (c, c, 3, 3)
            c_in = c
        shapes["out.conv"] = (1, self.base_channels, 1, 1)
        return shapes

    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.layer_shapes().values())


@dataclass
class UNetWeights:
    config: UNetConfig
    kernels: dict[str, np.ndarray]
    seed: int | None = None

    def __post_init__(self):
        expected = self.config.layer_shapes()
        if list(self.kernels) != list(expected):
            raise ValueError(f"layer names {list(self.kernels)} do not match config {list(expected)}")
        for name, shape in expected.items():
            if self.kernels[name].shape != shape:
                raise ValueError(f"{name}: shape {self.kernels[name].shape}, expected {shape}")

    @property
    def dtype(self):
        return next(iter(self.kernels.values())).dtype

    def astype(self, dtype) -> "UNetWeights":
        return UNetWeights(self.config, {k: v.astype(dtype) for k, v in self.kernels.items()}, self.seed)

    def copy(self) -> "UNetWeights":
        return UNetWeights(self.config, {k: v.copy() for k, v in self.kernels.items()}, self.seed)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.kernels.items()}

    @classmethod
    def zeros(cls, config: UNetConfig, dtype=np.float64) -> "UNetWeights":
        return cls(config, {k: np.zeros(s, dtype=dtype) for k, s in config.layer_shapes().items()})


def init_weights(config: UNetConfig, seed: int) -> UNetWeights:
    """Every kernel entry i.i.d. Normal(0, 0.01**2), drawn in layer order."""
    rng = np.random.default_rng(seed)
    kernels = {name: rng.normal(0.0, INIT_STD, size=shape) for name, shape in config.layer_shapes().items()}
    return UNetWeights(config, kernels, seed)


# -- layers -----------------------------------------------------------------------


def _as_matrix(kernel: np.ndarray) -> np.ndarray:
    # (out, in, kh, kw) -> (kh*kw*in, out), matching the im2col column order
    c_out = kernel.shape[0]
    return kernel.transpose(2, 3, 1, 0).reshape(-1, c_out)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    b, h, w, c = x.shape
    if k == 1:
        return x.reshape(b * h * w, c)
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (b, h, w, c, k, k)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * h * w, k * k * c)


def _check_kernel(x: np.ndarray, kernel: np.ndarray) -> int:
    if x.ndim != 4:
        raise ValueError(f"expected a (batch, h, w, c) array, got shape {x.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw or kh not in (1, 3):
        raise ValueError(f"only 1x1 and 3x3 kernels are supported, got {kh}x{kw}")
    if x.shape[-1] != c_in:
        raise ValueError(f"input has {x.shape[-1]} channels, kernel expects {c_in}")
    return kh


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, return_cols: bool = False):
    """Same-size cross-correlation with zero padding (no kernel flip).

    Parameters
    ----------
    x : ndarray, shape (batch, h, w, c_in)
    kernel : ndarray, shape (c_out, c_in, k, k) with k in {1, 3}
    return_cols : bool
        Also return the im2col matrix, which :func:`conv2d_backward` can reuse.
    """
    k = _check_kernel(x, kernel)
    b, h, w, _ = x.shape
    cols = _im2col(x, k)
    out = (cols @ _as_matrix(kernel)).reshape(b, h, w, kernel.shape[0])
    return (out, cols) if return_cols else out


def conv2d_backward(grad_out, x, kernel, cols=None, input_grad=True):
    """Gradients of a :func:`conv2d_forward` call.

    Returns ``(grad_x, grad_kernel)``; ``grad_x`` is None when ``input_grad``
    is False.
    """
    k = _check_kernel(x, kernel)
    if cols is None:
        cols = _im2col(x, k)
    return _conv_backward(grad_out, cols, kernel, x.shape, input_grad)


def _conv_backward(grad_out, cols, kernel, x_shape, input_grad):
    c_out, c_in, k, _ = kernel.shape
    g = grad_out.reshape(-1, c_out)
    grad_w = (cols.T @ g).reshape(k, k, c_in, c_out).transpose(3, 2, 0, 1)
    grad_x = None
    if input_grad:
        # adjoint of a same-padded stride-1 correlation: correlate with the
        # spatially flipped, channel-transposed kernel
        flipped = kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        grad_x = (_im2col(grad_out, k) @ _as_matrix(flipped)).reshape(x_shape)
    return grad_x, grad_w


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    return np.where(out > 0, grad_out, 0)


def maxpool2x2(x: np.ndarray):
    """2x2 stride-2 max pooling over axes 1 and 2.

    Returns ``(pooled, argmax)``; ``argmax`` holds the winning position in each
    block in row-major order (0..3), ties going to the first.
    """
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"spatial size {x.shape[1:3]} must be even")
    best = x[:, 0::2, 0::2]
    arg = np.zeros(best.shape, dtype=np.int8)
    for pos, (i, j) in enumerate(((0, 1), (1, 0), (1, 1)), start=1):
        cand = x[:, i::2, j::2]
        better = cand > best
        best = np.where(better, cand, best)
        arg[better] = pos
    return best, arg


def maxpool2x2_backward(grad_out: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    b, h, w, c = grad_out.shape
    grad = np.zeros((b, 2 * h, 2 * w, c), dtype=grad_out.dtype)
    for pos, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        grad[:, i::2, j::2] = np.where(argmax == pos, grad_out, 0)
    return grad


def avg_unpool2x2(x: np.ndarray) -> np.ndarray:
    """Replicate each pixel into a 2x2 block."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def avg_unpool2x2_backward(grad_out: np.ndarray) -> np.ndarray:
    b, h, w, c = grad_out.shape
    return grad_out.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def concat_channels(skip: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Contracting-path features first, upsampled features second."""
    if skip.shape[:3] != up.shape[:3]:
        raise ValueError(f"spatial mismatch: {skip.shape[:3]} vs {up.shape[:3]}")
    return np.concatenate([skip, up], axis=-1)


# -- network ------------------------------------------------------------------------


def _as_batch(images: np.ndarray, config: UNetConfig, dtype) -> tuple[np.ndarray, bool]:
    images = np.asarray(images)
    single = images.ndim == 2
    if single:
        images = images[None]
    if images.ndim != 3 or images.shape[1:] != (config.input_size, config.input_size):
        raise ValueError(f"expected ({config.input_size}, {config.input_size}) images, got shape {images.shape}")
    return images.astype(dtype, copy=False)[..., None], single


def unet_forward(weights: UNetWeights, images: np.ndarray, return_cache: bool = False):
    """Run the network on one ``(N, N)`` image or a ``(B, N, N)`` batch.

    Computation happens in the weights' dtype. With ``return_cache`` the
    intermediates needed by :func:`unet_backward` are returned as well.
    """
    cfg, w = weights.config, weights.kernels
    x, single = _as_batch(images, cfg, weights.dtype)
    cache: dict = {"input_shape": x.shape}

    def conv_relu(name, h):
        z, cols = conv2d_forward(h, w[name], return_cols=True)
        out = relu(z)
        if return_cache:
            cache[name] = (h.shape, cols, out)
        return out

    skips = []
    h = x
    for level in range(cfg.depth + 1):
        h = conv_relu(f"enc{level}.conv1", h)
        h = conv_relu(f"enc{level}.conv2", h)
        if level < cfg.depth:
            skips.append(h)
            h, arg = maxpool2x2(h)
            if return_cache:
                cache[f"pool{level}"] = arg
    for level in reversed(range(cfg.depth)):
        h = concat_channels(skips[level], avg_unpool2x2(h))
        h = conv_relu(f"dec{level}.conv1", h)
        h = conv_relu(f"dec{level}.conv2", h)
    out, cols = conv2d_forward(h, w["out.conv"], return_cols=True)
    if return_cache:
        cache["out.conv"] = (h.shape, cols, None)
    out = out[..., 0]
    if single:
        out = out[0]
    return (out, cache) if return_cache else out


def unet_backward(weights: UNetWeights, cache: dict, grad_output: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss w.r.t. every kernel, given dLoss/dOutput."""
    if "out.conv" not in cache:
        raise ValueError("cache is missing forward intermediates; call unet_forward(..., return_cache=True)")
    cfg, w = weights.config, weights.kernels
    g = np.asarray(grad_output, dtype=weights.dtype)
    if g.ndim == 2:
        g = g[None]
    g = g[..., None]
    if g.shape != cache["input_shape"]:
        raise ValueError(f"grad_output shape {g.shape[:3]} does not match the forward batch {cache['input_shape'][:3]}")
    grads: dict[str, np.ndarray] = {}

    def back(name, g, input_grad=True):
        in_shape, cols, out = cache[name]
        if out is not None:
            g = relu_backward(g, out)
        gx, grads[name] = _conv_backward(g, cols, w[name], in_shape, input_grad)
        return gx

    g = back("out.conv", g)
    skip_grads = {}
    for level in range(cfg.depth):
        g = back(f"dec{level}.conv2", g)
        g = back(f"dec{level}.conv1", g)
        c_skip = cfg.channels(level)
        skip_grads[level] = g[..., :c_skip]
        g = avg_unpool2x2_backward(g[..., c_skip:])
    for level in reversed(range(cfg.depth + 1)):
        if level < cfg.depth:
            g = maxpool2x2_backward(g, cache[f"pool{level}"]) + skip_grads[level]
        g = back(f"enc{level}.conv2", g)
        g = back(f"enc{level}.conv1", g, input_grad=level > 0)
    return {name: grads[name] for name in cfg.layer_shapes()}


# -- checkpoints ----------------------------------------------------------------------


def save_weights(weights: UNetWeights, directory: str | Path, extra: dict | None = None) -> Path:
    """``weights.json`` manifest plus one little-endian float32 blob per layer."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = []
    for name, k in weights.kernels.items():
        fname = f"{name}.f32"
        (directory / fname).write_bytes(np.ascontiguousarray(k, dtype="<f4").tobytes())
        layers.append({"name": name, "shape": list(k.shape), "file": fname})
    manifest = {
        "config": asdict(weights.config),
        "seed": weights.seed,
        "dtype": "float32-le",
        "order": "out,in,kh,kw",
        "layers": layers,
    }
    if extra:
        manifest.update(extra)
    path = directory / "weights.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_weights(path: str | Path, dtype=np.float64) -> UNetWeights:
    path = Path(path)
    if path.is_dir():
        path = path / "weights.json"
    manifest = json.loads(path.read_text())
    config = UNetConfig(**manifest["config"])
    kernels = {}
    for layer in manifest["layers"]:
        shape = tuple(layer["shape"])
        raw = np.frombuffer((path.parent / layer["file"]).read_bytes(), dtype="<f4")
        if raw.size != int(np.prod(shape)):
            raise ValueError(f"{layer['file']}: {raw.size} floats, expected shape {shape}")
        kernels[layer["name"]] = raw.reshape(shape).astype(dtype)
    return UNetWeights(config, kernels, manifest.get("seed"))
