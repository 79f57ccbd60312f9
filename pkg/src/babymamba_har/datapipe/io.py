"""Canonical CSV interchange format and dataset manifests.

CSV header: ``subject,timestamp,label,ch_0,...,ch_{C-1}``; one row per
sample, timestamps monotone within each subject.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, SchemaError
from ..presets import DatasetPreset
from .windows import Recording

FIXED_COLUMNS = ("subject", "timestamp", "label")


def write_csv(recs: list[Recording], path) -> None:
    if not recs:
        raise DataError("nothing to write")
    C = recs[0].channels
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([*FIXED_COLUMNS, *(f"ch_{i}" for i in range(C))])
        for r in recs:
            if r.channels != C:
                raise DataError("all recordings must share the channel count")
            for t in range(r.length):
                w.writerow([r.subject_id, repr(float(r.timestamps[t])), int(r.labels[t]),
                            *(repr(float(v)) for v in r.data[:, t])])


def load_csv(path, fs: float | None = None) -> list[Recording]:
    """Parse a canonical CSV into one recording per subject (order of first appearance).

    ``fs`` defaults to the inverse of the median timestamp step.
    """
    rows: dict[int, list[tuple[float, int, list[float]]]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(header[:3]) != FIXED_COLUMNS:
            raise SchemaError(f"{path}: header must start with {','.join(FIXED_COLUMNS)}, got {header[:3]}")
        ch = header[3:]
        if not ch or ch != [f"ch_{i}" for i in range(len(ch))]:
            raise SchemaError(f"{path}: channel columns must be ch_0..ch_(C-1), got {ch}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise SchemaError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                subj, ts, lab = int(row[0]), float(row[1]), int(row[2])
                vals = [float(v) for v in row[3:]]
            except ValueError as e:
                raise SchemaError(f"{path}:{lineno}: non-numeric cell ({e})") from None
            rows.setdefault(subj, []).append((ts, lab, vals))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    recs = []
    for subj, items in rows.items():
        ts = np.array([r[0] for r in items])
        if np.any(np.diff(ts) <= 0):
            raise SchemaError(f"{path}: timestamps for subject {subj} are not strictly increasing")
        rate = fs
        if rate is None:
            rate = 1.0 / float(np.median(np.diff(ts))) if len(ts) > 1 else 1.0
        data = np.array([r[2] for r in items]).T
        recs.append(Recording(subj, data, rate, np.array([r[1] for r in items]), ts))
    return recs


PREPROCESSING_MODES = ("zscore", "rescue_robust", "rescue_lowpass")
SPLIT_PROTOCOLS = ("subject", "loso", "temporal")


@dataclass
class DatasetManifest:
    name: str
    channels: int
    fs: float
    seq_len: int
    stride: int
    preprocessing: str = "zscore"
    split: str = "subject"
    num_classes: int | None = None
    data: str | None = None  # CSV path, relative to the manifest file
    test_subjects: list[int] = field(default_factory=list)
    loso_fold: int = 0
    train_frac: float = 0.8
    cutoff_hz: float = 5.0

    def __post_init__(self):
        if self.preprocessing not in PREPROCESSING_MODES:
            raise ConfigError(f"unknown preprocessing {self.preprocessing!r}; expected one of {PREPROCESSING_MODES}")
        if self.split not in SPLIT_PROTOCOLS:
            raise ConfigError(f"unknown split protocol {self.split!r}; expected one of {SPLIT_PROTOCOLS}")
        if min(self.channels, self.seq_len, self.stride) < 1 or self.fs <= 0:
            raise ConfigError("manifest extents must be positive")

    @classmethod
    def from_preset(cls, p: DatasetPreset, **overrides) -> "DatasetManifest":
        base = dict(name=p.name, channels=p.channels, fs=p.fs, seq_len=p.seq_len, stride=p.stride,
                    preprocessing=p.preprocessing, split=p.split, num_classes=p.classes)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON ({e})") from None
        try:
            return cls(**raw)
        except TypeError as e:
            raise SchemaError(f"{path}: {e}") from None

    def data_path(self, manifest_path) -> Path:
        if self.data is None:
            raise ConfigError(f"manifest {self.name!r} has no data file")
        return (Path(manifest_path).parent / self.data).resolve()
