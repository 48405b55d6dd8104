"""Sub-Nyquist MRI reconstruction: phantoms, k-space sampling, a numpy U-net and k-space correction."""

from .kspace import build_mask, forward_dft, inverse_dft, kspace_from_image, predict_fold, reduction_factor
from .phantom import generate_dataset, generate_shepp_logan, render_phantom, shift_anomalies
from .reconstruction import reconstruct
from .training import TrainConfig, train
from .unet import UNetConfig, init_weights, unet_forward

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "UNetConfig",
    "build_mask",
    "forward_dft",
    "generate_dataset",
    "generate_shepp_logan",
    "init_weights",
    "inverse_dft",
    "kspace_from_image",
    "predict_fold",
    "reconstruct",
    "reduction_factor",
    "render_phantom",
    "shift_anomalies",
    "train",
    "unet_forward",
]
