"""Manifest-driven preprocessing: filter, window, split, normalise."""

from __future__ import annotations

import numpy as np

from ..errors import DataError, ProtocolError
from .filters import butter_lowpass_filtfilt
from .io import DatasetManifest
from .normalize import NormStats, fit_norm_stats, normalize
from .splits import split_loso, split_subject, split_temporal
from .windows import Recording, WindowSet, window_recordings


def default_test_subjects(subjects) -> list[int]:
    """The last 20% of subject ids (at least one)."""
    subjects = sorted(int(s) for s in np.unique(subjects))
    n = max(1, round(0.2 * len(subjects)))
    return subjects[-n:]


def prepare_splits(manifest: DatasetManifest, recs: list[Recording]) -> tuple[WindowSet, WindowSet, NormStats]:
    """Train and held-out window sets, normalised with training statistics only.

    Rescue modes low-pass each continuous stream before windowing; robust
    scaling is applied after filtering.
    """
    for r in recs:
        if r.channels != manifest.channels:
            raise DataError(f"subject {r.subject_id} has {r.channels} channels, manifest says {manifest.channels}")
    if manifest.preprocessing in ("rescue_robust", "rescue_lowpass"):
        recs = [Recording(r.subject_id, butter_lowpass_filtfilt(r.data, manifest.cutoff_hz, r.fs),
                          r.fs, r.labels, r.timestamps) for r in recs]
    ws = window_recordings(recs, manifest.seq_len, manifest.stride)
    if manifest.split == "temporal":
        train, test = split_temporal(ws, manifest.train_frac)
    elif manifest.split == "loso":
        folds = split_loso(ws)
        if not 0 <= manifest.loso_fold < len(folds):
            raise ProtocolError(f"LOSO fold {manifest.loso_fold} out of range for {len(folds)} subjects")
        _, train, test = folds[manifest.loso_fold]
    else:
        test_subjects = manifest.test_subjects or default_test_subjects(ws.subjects)
        train, test = split_subject(ws, test_subjects)
    if len(train) == 0 or len(test) == 0:
        raise ProtocolError("split produced an empty partition")
    stats = fit_norm_stats(train, "robust" if manifest.preprocessing == "rescue_robust" else "zscore")
    return normalize(train, stats), normalize(test, stats), stats
