"""Butterworth low-pass design and zero-phase forward-backward filtering."""

from __future__ import annotations

import numpy as np
from scipy import signal

from ..errors import ConfigError


def butter_lowpass(cutoff: float, fs: float, order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Digital Butterworth low-pass (b, a) via bilinear transform with pre-warping.

    Analog prototype poles sit on the left half of the unit circle, scaled to
    the pre-warped cutoff; the bilinear map puts every zero at z = -1, and
    the gain is set for unit DC response.
    """
    if not 0 < cutoff < fs / 2:
        raise ConfigError(f"cutoff must lie in (0, fs/2) = (0, {fs / 2}), got {cutoff}")
    if order < 1:
        raise ConfigError(f"filter order must be >= 1, got {order}")
    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    warped = 2 * fs * np.tan(np.pi * cutoff / fs)
    s_poles = warped * proto
    z_poles = (2 * fs + s_poles) / (2 * fs - s_poles)
    a = np.real(np.poly(z_poles))
    b = np.real(np.poly(-np.ones(order)))
    b *= a.sum() / b.sum()
    return b, a


def filtfilt(b: np.ndarray, a: np.ndarray, x: np.ndarray, padlen: int | None = None) -> np.ndarray:
    """Zero-phase filtering along the last axis.

    Odd reflection padding, steady-state initial conditions scaled to the
    first sample of each pass, forward pass, reverse, forward pass, reverse.
    """
    x = np.asarray(x, dtype=float)
    order = max(len(a), len(b)) - 1
    padlen = 3 * 2 * order if padlen is None else padlen
    n = x.shape[-1]
    if n <= padlen:
        raise ConfigError(f"signal of {n} samples is too short for pad length {padlen}")
    left = 2 * x[..., :1] - x[..., padlen:0:-1]
    right = 2 * x[..., -1:] - x[..., -2:-padlen - 2:-1]
    ext = np.concatenate([left, x, right], axis=-1)
    zi = signal.lfilter_zi(b, a)
    shape = (1,) * (x.ndim - 1) + (-1,)
    y, _ = signal.lfilter(b, a, ext, zi=zi.reshape(shape) * ext[..., :1])
    y = y[..., ::-1]
    y, _ = signal.lfilter(b, a, y, zi=zi.reshape(shape) * y[..., :1])
    return np.ascontiguousarray(y[..., ::-1][..., padlen:padlen + n])


def butter_lowpass_filtfilt(x: np.ndarray, cutoff: float, fs: float, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth low-pass of (C, T) data along time."""
    b, a = butter_lowpass(cutoff, fs, order)
    return filtfilt(b, a, x, padlen=3 * 2 * order)
