"""Sensor-data protocol: windows, scaling, filtering, splits, augmentation, synthetic data."""

from .augment import AugmentConfig, augment, augment_batch, time_warp
from .filters import butter_lowpass, butter_lowpass_filtfilt, filtfilt
from .io import DatasetManifest, load_csv, write_csv
from .normalize import NormStats, apply_norm, fit_norm_stats, normalize
from .pipeline import default_test_subjects, prepare_splits
from .splits import split_loso, split_subject, split_temporal
from .synth import synth_har
from .windows import Recording, WindowSet, concat, window, window_recordings

__all__ = [
    "AugmentConfig", "augment", "augment_batch", "time_warp",
    "butter_lowpass", "butter_lowpass_filtfilt", "filtfilt",
    "DatasetManifest", "load_csv", "write_csv",
    "NormStats", "apply_norm", "fit_norm_stats", "normalize",
    "default_test_subjects", "prepare_splits",
    "split_loso", "split_subject", "split_temporal",
    "synth_har",
    "Recording", "WindowSet", "concat", "window", "window_recordings",
]
