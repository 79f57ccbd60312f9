"""Macro F1, confusion matrices and multi-seed aggregation."""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .errors import ContractError


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """K×K counts, rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"label arrays differ in shape: {y_true.shape} vs {y_pred.shape}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 = 2PR/(P+R) per class; 0 where P+R = 0 (including absent classes)."""
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0).astype(float)
    true = cm.sum(axis=1).astype(float)
    # 2PR/(P+R) == 2TP/(pred+true); zero-division gives 0
    denom = pred + true
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 2:
        raise ContractError(f"macro F1 needs a square matrix with K >= 2, got {cm.shape}")
    if cm.sum() == 0:
        raise ContractError("macro F1 is undefined for an empty confusion matrix")
    return float(per_class_f1(cm).mean())


def balanced_accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    true = cm.sum(axis=1)
    present = true > 0
    return float((np.diag(cm)[present] / true[present]).mean())


def aggregate_seeds(values) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1); std is 0 for a single value."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ContractError("no values to aggregate")
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), std


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def content_hash(data: bytes) -> str:
    """Git blob hash of ``data``."""
    return hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()


def results_record(y_true, y_pred, num_classes: int, **extra) -> dict:
    cm = confusion_matrix(y_true, y_pred, num_classes)
    f1 = macro_f1(cm)
    rec = {"macro_f1": f1, "per_class_f1": per_class_f1(cm).tolist(),
           "confusion_matrix": cm.tolist()}
    rec.update(extra)
    if not math.isfinite(f1):
        raise ContractError("non-finite macro F1")
    return rec
