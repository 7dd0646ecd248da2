"""Audio container types shared across the simulation and decoding stages.

Arrays are float64 internally, shaped (samples,) for mono and
(samples, channels) otherwise. SH-domain signals are ACN-ordered with
SN3D normalization (see :mod:`binscene.shmath`).
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .shmath import n_channels

__all__ = ["AmbiSignal", "BinauralSignal", "convolve_channels", "total_energy"]


@dataclass(frozen=True)
class AmbiSignal:
    """SH-domain multichannel audio (ACN order, SN3D)."""

    order: int
    fs: int
    data: np.ndarray  # (samples, (order+1)**2)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != n_channels(self.order):
            raise ValueError(
                f"expected (T, {n_channels(self.order)}) data for order "
                f"{self.order}, got {data.shape}")
        object.__setattr__(self, "data", data)

    def __len__(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class BinauralSignal:
    """Two-channel audio, column 0 = left ear, column 1 = right ear."""

    fs: int
    data: np.ndarray  # (samples, 2)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2:
            raise ValueError(f"expected (T, 2) data, got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def left(self):
        return self.data[:, 0]

    @property
    def right(self):
        return self.data[:, 1]

    def __len__(self):
        return self.data.shape[0]


def convolve_channels(x, h):
    """Convolve a signal with a filter bank along time.

    x: (T,) mono broadcast over the bank, or (T, C) paired channelwise
    with h: (Th, C). Returns (T + Th - 1, C).
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if h.ndim != 2:
        raise ValueError("expected a 2-D filter bank")
    if x.ndim == 1:
        x = x[:, None]
    elif x.ndim != 2 or x.shape[1] not in (1, h.shape[1]):
        raise ValueError("signal channels do not match the filter bank")
    return fftconvolve(x, h, axes=0)


def total_energy(x):
    """Sum of squares over all samples and channels."""
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * x))
