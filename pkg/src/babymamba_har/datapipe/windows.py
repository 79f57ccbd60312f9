"""Recordings, window sets and sliding-window segmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class Recording:
    subject_id: int
    data: np.ndarray  # (C, T)
    fs: float
    labels: np.ndarray  # (T,)
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.data.ndim != 2:
            raise DataError(f"recording data must be (C, T), got {self.data.shape}")
        if self.labels.shape != (self.data.shape[1],):
            raise DataError(f"labels length {self.labels.shape} != samples {self.data.shape[1]}")
        if self.timestamps is None:
            self.timestamps = np.arange(self.data.shape[1]) / self.fs
        else:
            self.timestamps = np.asarray(self.timestamps, dtype=float)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]


@dataclass
class WindowSet:
    X: np.ndarray  # (N, C, L)
    y: np.ndarray  # (N,)
    subjects: np.ndarray  # (N,)
    chrono: np.ndarray  # (N,) position within the source stream
    starts: np.ndarray  # (N,) first sample index in the source stream
    sources: np.ndarray  # (N,) index of the source recording
    split: str = ""
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.X)
        for name in ("y", "subjects", "chrono", "starts", "sources"):
            arr = np.asarray(getattr(self, name), dtype=int)
            if arr.shape != (n,):
                raise DataError(f"window set field {name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)

    def __len__(self) -> int:
        return len(self.X)

    @property
    def window_len(self) -> int:
        return self.X.shape[2]

    @property
    def channels(self) -> int:
        return self.X.shape[1]

    def subset(self, idx, split: str | None = None) -> "WindowSet":
        idx = np.asarray(idx, dtype=int)
        return WindowSet(self.X[idx], self.y[idx], self.subjects[idx], self.chrono[idx],
                         self.starts[idx], self.sources[idx],
                         self.split if split is None else split, list(self.notes))

    def with_X(self, X: np.ndarray) -> "WindowSet":
        return WindowSet(X, self.y, self.subjects, self.chrono, self.starts, self.sources,
                         self.split, list(self.notes))

    @staticmethod
    def empty(channels: int, length: int) -> "WindowSet":
        z = np.zeros(0, dtype=int)
        return WindowSet(np.zeros((0, channels, length)), z, z, z, z, z)


def _plurality(labels: np.ndarray) -> int:
    values, first, counts = np.unique(labels, return_index=True, return_counts=True)
    best = counts == counts.max()
    # ties go to the label that shows up first in the window
    return int(values[best][np.argmin(first[best])])


def window(rec: Recording, length: int, stride: int, source: int = 0) -> WindowSet:
    """Cut windows at offsets 0, stride, 2*stride, ... labelled by plurality vote."""
    if length < 1 or stride < 1:
        raise ConfigError(f"window length and stride must be >= 1, got {length=} {stride=}")
    if length > rec.length:
        msg = f"window length {length} exceeds recording length {rec.length}; no windows"
        log.warning(msg)
        ws = WindowSet.empty(rec.channels, length)
        ws.notes.append(msg)
        return ws
    starts = np.arange(0, rec.length - length + 1, stride)
    X = np.stack([rec.data[:, s:s + length] for s in starts])
    y = np.array([_plurality(rec.labels[s:s + length]) for s in starts])
    n = len(starts)
    return WindowSet(X, y, np.full(n, rec.subject_id), np.arange(n), starts, np.full(n, source))


def concat(sets: list[WindowSet], split: str = "") -> WindowSet:
    sets = [s for s in sets if len(s)]
    if not sets:
        raise DataError("no windows to concatenate")
    return WindowSet(
        np.concatenate([s.X for s in sets]), np.concatenate([s.y for s in sets]),
        np.concatenate([s.subjects for s in sets]), np.concatenate([s.chrono for s in sets]),
        np.concatenate([s.starts for s in sets]), np.concatenate([s.sources for s in sets]),
        split, [n for s in sets for n in s.notes],
    )


def window_recordings(recs: list[Recording], length: int, stride: int) -> WindowSet:
    return concat([window(r, length, stride, source=i) for i, r in enumerate(recs)])
