"""Per-channel scaling fitted on training windows only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .windows import WindowSet

SCALE_FLOOR = 1e-8


@dataclass
class NormStats:
    mode: str  # zscore | robust
    center: np.ndarray  # (C,) mean or median
    scale: np.ndarray  # (C,) std or IQR, floored

    def to_dict(self) -> dict:
        return {"mode": self.mode, "center": self.center.tolist(), "scale": self.scale.tolist()}


def fit_norm_stats(train: WindowSet | np.ndarray, mode: str = "zscore") -> NormStats:
    """Statistics over every sample of the training windows, per channel."""
    X = train.X if isinstance(train, WindowSet) else np.asarray(train)
    flat = np.moveaxis(X, 1, 0).reshape(X.shape[1], -1)
    if mode == "zscore":
        center, scale = flat.mean(axis=1), flat.std(axis=1)
    elif mode == "robust":
        q1, med, q3 = np.percentile(flat, [25, 50, 75], axis=1)
        center, scale = med, q3 - q1
    else:
        raise ConfigError(f"unknown normalisation mode {mode!r}")
    return NormStats(mode, center, np.maximum(scale, SCALE_FLOOR))


def apply_norm(X: np.ndarray, stats: NormStats) -> np.ndarray:
    return (X - stats.center[:, None]) / stats.scale[:, None]


def normalize(ws: WindowSet, stats: NormStats) -> WindowSet:
    return ws.with_X(apply_norm(ws.X, stats))
