"""Online training-time augmentation of single windows."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class AugmentConfig:
    p_time_warp: float = 0.5
    p_magnitude: float = 0.5
    magnitude_range: tuple[float, float] = (0.8, 1.2)
    p_jitter: float = 0.3
    jitter_sigma: float = 0.05
    p_channel_dropout: float = 0.2
    warp_knots: int = 4
    warp_sigma_frac: float = 0.1

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(p_time_warp=0.0, p_magnitude=0.0, p_jitter=0.0, p_channel_dropout=0.0)

    def to_dict(self) -> dict:
        return asdict(self)


def time_warp(x: np.ndarray, rng: np.random.Generator, knots: int = 4, sigma_frac: float = 0.1) -> np.ndarray:
    """Monotone piecewise-linear reparameterisation of time, resampled back to L."""
    L = x.shape[-1]
    grid = np.linspace(0, L - 1, knots + 2)
    moved = grid[1:-1] + rng.normal(0.0, sigma_frac * L, size=knots)
    moved = np.sort(np.clip(moved, 0, L - 1))
    src = np.interp(np.arange(L), grid, np.concatenate([[0.0], moved, [L - 1.0]]))
    t = np.arange(L)
    return np.stack([np.interp(src, t, ch) for ch in x])


def augment(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Apply each transform independently with its probability; shape is preserved.

    Gate draws happen in a fixed order so the random stream is reproducible.
    """
    gates = rng.random(4)
    out = x
    if gates[0] < cfg.p_time_warp:
        out = time_warp(out, rng, cfg.warp_knots, cfg.warp_sigma_frac)
    if gates[1] < cfg.p_magnitude:
        out = out * rng.uniform(*cfg.magnitude_range)
    if gates[2] < cfg.p_jitter:
        out = out + rng.normal(0.0, cfg.jitter_sigma, size=out.shape)
    if gates[3] < cfg.p_channel_dropout:
        out = out.copy()
        out[rng.integers(out.shape[0])] = 0.0
    return out


def augment_batch(X: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    return np.stack([augment(x, rng, cfg) for x in X]) if len(X) else X
