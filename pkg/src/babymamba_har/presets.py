"""Windowing and protocol presets for the eight benchmark datasets (shapes only, no data)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    subjects: int
    classes: int
    channels: int
    fs: float
    seq_len: int
    stride: int
    preprocessing: str  # zscore | rescue_robust | rescue_lowpass
    split: str  # subject | loso | temporal

    @property
    def seconds(self) -> float:
        return self.seq_len / self.fs

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS: dict[str, DatasetPreset] = {
    p.name: p
    for p in [
        DatasetPreset("uci-har", 30, 6, 9, 50, 128, 64, "zscore", "subject"),
        DatasetPreset("motionsense", 24, 6, 6, 50, 128, 64, "zscore", "loso"),
        DatasetPreset("wisdm", 36, 6, 3, 20, 128, 64, "zscore", "loso"),
        DatasetPreset("pamap2", 9, 12, 19, 100, 128, 64, "rescue_robust", "loso"),
        DatasetPreset("opportunity", 4, 5, 79, 30, 128, 64, "zscore", "subject"),
        DatasetPreset("unimib", 30, 9, 3, 50, 128, 64, "zscore", "loso"),
        DatasetPreset("skoda", 1, 11, 30, 98, 98, 24, "rescue_lowpass", "temporal"),
        DatasetPreset("daphnet", 10, 2, 9, 64, 64, 32, "zscore", "loso"),
    ]
}


def get_preset(name: str) -> DatasetPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
