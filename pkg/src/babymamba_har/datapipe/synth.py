"""Synthetic multi-subject sensor recordings for desk-scale experiments."""

from __future__ import annotations

import numpy as np
from scipy import signal

from ..errors import ConfigError
from .windows import Recording


def synth_har(n_subjects: int = 8, n_classes: int = 3, channels: int = 6, window_len: int = 128,
              fs: float = 50.0, seed: int = 0, windows_per_class: int = 8, noise: float = 0.1,
              asymmetric: bool = False) -> list[Recording]:
    """One recording per subject with a contiguous segment per class.

    Each class has its own per-channel signature (frequency, amplitude,
    harmonic mix); subjects add channel gains, phase offsets and a small
    tempo change. With ``asymmetric`` every class shares one frequency and
    differs only in sawtooth skew, so some classes are time reversals of
    others and carry identical magnitude spectra.

    Segments are ``windows_per_class * window_len`` samples long, so windowing
    with stride equal to the window length gives exactly balanced classes.
    """
    if min(n_subjects, n_classes, channels, window_len, windows_per_class) < 1:
        raise ConfigError("synthetic dataset extents must be >= 1")
    rng = np.random.default_rng(seed)
    freqs = 1.0 + 1.5 * np.arange(n_classes) if not asymmetric else np.full(n_classes, 2.0)
    amp = rng.uniform(0.5, 1.5, size=(n_classes, channels))
    harm = rng.uniform(0.0, 0.5, size=(n_classes, channels))
    phase = rng.uniform(0, 2 * np.pi, size=(n_classes, channels))
    widths = np.linspace(0.95, 0.05, n_classes) if n_classes > 1 else np.array([0.5])

    seg = windows_per_class * window_len
    recs = []
    for s in range(n_subjects):
        gain = rng.uniform(0.8, 1.2, size=channels)
        shift = rng.uniform(-0.5, 0.5, size=channels)
        tempo = rng.uniform(0.97, 1.03)
        order = rng.permutation(n_classes)
        parts, labels = [], []
        for k in order:
            t = np.arange(seg) / fs
            arg = 2 * np.pi * freqs[k] * tempo * t[None, :] + phase[k][:, None] + shift[:, None]
            if asymmetric:
                wave = signal.sawtooth(arg, widths[k]) + harm[k][:, None] * np.sin(2 * arg)
            else:
                wave = np.sin(arg) + harm[k][:, None] * np.sin(2 * arg)
            x = (gain * amp[k])[:, None] * wave + rng.normal(0.0, noise, size=(channels, seg))
            parts.append(x)
            labels.append(np.full(seg, k))
        recs.append(Recording(s, np.concatenate(parts, axis=1), fs, np.concatenate(labels)))
    return recs
