"""Leakage-free train/test partitions."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, ProtocolError
from .windows import WindowSet


def _require_subjects(ws: WindowSet) -> np.ndarray:
    subjects = np.unique(ws.subjects)
    if len(subjects) < 2:
        raise ProtocolError(
            "subject-wise splitting needs at least two subjects; use the temporal split for "
            "single-subject data, since random splits of overlapping windows leak test samples")
    return subjects


def split_subject(ws: WindowSet, test_subjects) -> tuple[WindowSet, WindowSet]:
    _require_subjects(ws)
    test_mask = np.isin(ws.subjects, list(test_subjects))
    if test_mask.all() or not test_mask.any():
        raise ProtocolError(f"test subjects {sorted(test_subjects)} leave an empty split")
    return (ws.subset(np.flatnonzero(~test_mask), "train"),
            ws.subset(np.flatnonzero(test_mask), "test"))


def split_loso(ws: WindowSet) -> list[tuple[int, WindowSet, WindowSet]]:
    """One fold per subject: (held-out subject, train, test)."""
    return [(int(s), *split_subject(ws, [s])) for s in _require_subjects(ws)]


def _overlaps(train: WindowSet, test: WindowSet) -> np.ndarray:
    """Mask of test windows sharing samples with any training window of the same source."""
    L = test.window_len
    hit = np.zeros(len(test), dtype=bool)
    for src in np.unique(test.sources):
        tr = np.sort(train.starts[train.sources == src])
        if tr.size == 0:
            continue
        te_idx = np.flatnonzero(test.sources == src)
        s = test.starts[te_idx]
        # nearest training start at or below s + L - 1 must end after s
        pos = np.searchsorted(tr, s + L - 1, side="right") - 1
        ok = pos >= 0
        hit[te_idx[ok]] = tr[pos[ok]] + L > s[ok]
    return hit


def split_temporal(ws: WindowSet, train_frac: float = 0.8, purge: bool = True) -> tuple[WindowSet, WindowSet]:
    """Per class, the chronologically first ``train_frac`` of windows train, the rest test.

    With ``purge`` the test windows that share samples with any training
    window (overlapping strides, class boundaries) are dropped.
    """
    if not 0 < train_frac < 1:
        raise ConfigError(f"train_frac must be in (0, 1), got {train_frac}")
    train_idx, test_idx = [], []
    for c in np.unique(ws.y):
        idx = np.flatnonzero(ws.y == c)
        order = idx[np.lexsort((ws.chrono[idx], ws.sources[idx]))]
        n_train = int(math.floor(train_frac * len(order) + 1e-9))
        train_idx.extend(order[:n_train])
        test_idx.extend(order[n_train:])
    train = ws.subset(np.sort(train_idx), "train")
    test = ws.subset(np.sort(test_idx), "test")
    if purge and len(test):
        keep = ~_overlaps(train, test)
        test = test.subset(np.flatnonzero(keep), "test")
    return train, test
