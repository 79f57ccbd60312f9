"""AdamW, gradient clipping, label-smoothed cross-entropy, plateau schedule and the fit loop."""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .datapipe import AugmentConfig, WindowSet, augment_batch
from .errors import ConfigError, NumericError
from .metrics import confusion_matrix, macro_f1
from .model import Model
from .numerics import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-2
    sched_factor: float = 0.5
    sched_patience: int = 5
    early_stop_patience: int = 10
    max_epochs: int = 200
    clip_max_norm: float = 1.0
    label_smoothing: float = 0.1
    batch_size: int = 64
    master_seed: int = 0
    n_seeds: int = 5
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    freeze: list[str] = field(default_factory=list)  # parameter names left untouched

    def __post_init__(self):
        if isinstance(self.augment, dict):
            aug = dict(self.augment)
            if "magnitude_range" in aug:
                aug["magnitude_range"] = tuple(aug["magnitude_range"])
            self.augment = AugmentConfig(**aug)
        if not 0 < self.sched_factor < 1:
            raise ConfigError(f"scheduler factor must be in (0, 1), got {self.sched_factor}")
        if self.sched_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patiences must be >= 1")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError(f"label smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.n_seeds < 1:
            raise ConfigError("batch_size, max_epochs and n_seeds must be >= 1")
        if self.lr <= 0 or self.clip_max_norm <= 0:
            raise ConfigError("lr and clip_max_norm must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)

    def seeds(self) -> list[int]:
        return derive_seeds(self.master_seed, self.n_seeds)


def derive_seeds(master_seed: int, n: int) -> list[int]:
    return [master_seed + i for i in range(n)]


# ---------------------------------------------------------------------------
# optimiser pieces


def adamw_step(theta: np.ndarray, grad: np.ndarray, state: dict, t: int, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.0) -> np.ndarray:
    """One AdamW update with decoupled weight decay; ``state`` holds m and v."""
    if t < 1:
        raise ConfigError(f"step counter must start at 1, got {t}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient at step {t} "
                           f"({int(np.sum(~np.isfinite(grad)))} of {grad.size} entries)")
    m = state.get("m", np.zeros_like(theta))
    v = state.get("v", np.zeros_like(theta))
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    state["m"], state["v"] = m, v
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * theta


class AdamW:
    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.lr = cfg.lr
        self.t = 0
        self.state: dict[str, dict] = {k: {} for k in params}

    def step(self) -> None:
        self.t += 1
        c = self.cfg
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            try:
                p.data = adamw_step(p.data, g, self.state[k], self.t, self.lr, c.beta1, c.beta2,
                                    c.adam_eps, c.weight_decay)
            except NumericError as e:
                raise NumericError(f"parameter {k}: {e}") from None


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))


def clip_grad_norm(grads: list[np.ndarray], max_norm: float = 1.0) -> tuple[list[np.ndarray], float]:
    """Rescale all gradients by max_norm/norm when the global L2 norm exceeds max_norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [None if g is None else g * scale for g in grads]
    return grads, norm


def smoothed_ce(logits: Tensor, y, eps: float = 0.1) -> Tensor:
    """Mean cross-entropy against (1-eps)·onehot + eps/K."""
    logits = nx.as_tensor(logits)
    K = logits.shape[-1]
    y = np.atleast_1d(np.asarray(y, dtype=int))
    lp = nx.log_softmax(logits.reshape(-1, K), axis=-1)
    q = np.full((len(y), K), eps / K)
    q[np.arange(len(y)), y] += 1.0 - eps
    return -(lp * q).sum() * (1.0 / len(y))


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` epochs without strict improvement (maximising)."""

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 5):
        self.lr, self.factor, self.patience = lr, factor, patience
        self.best = -math.inf
        self.bad = 0

    def step(self, metric: float) -> float:
        if metric > self.best:
            self.best, self.bad = metric, 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


def lr_trace(history, lr: float, factor: float = 0.5, patience: int = 5) -> list[float]:
    s = PlateauScheduler(lr, factor, patience)
    return [s.step(m) for m in history]


# ---------------------------------------------------------------------------
# training loop


def evaluate(model: Model, ws: WindowSet, batch_size: int = 256) -> tuple[float, np.ndarray]:
    K = model.cfg.num_classes
    cm = confusion_matrix(ws.y, model.predict(ws.X, batch_size), K)
    return macro_f1(cm), cm


@dataclass
class FitResult:
    model: Model
    best_f1: float
    best_epoch: int
    epochs: list[dict]
    timings: list[dict]


def _check_fits(model: Model, ws: WindowSet, name: str) -> None:
    if len(ws) == 0:
        raise ConfigError(f"{name} split is empty")
    if ws.X.shape[1:] != (model.cfg.num_channels, model.cfg.seq_len):
        raise ConfigError(f"{name} windows {ws.X.shape[1:]} do not match model input "
                          f"({model.cfg.num_channels}, {model.cfg.seq_len})")
    if not np.all(np.isfinite(ws.X)):
        raise NumericError(f"{name} split contains non-finite samples")


def fit(model: Model, train: WindowSet, val: WindowSet, cfg: TrainConfig, seed: int | None = None,
        on_epoch=None) -> FitResult:
    """Train with early stopping on validation macro F1 and restore the best checkpoint.

    Batch order and augmentation draw from one generator seeded by ``seed``
    (defaults to the model seed), so identical seeds give identical logs.
    """
    _check_fits(model, train, "train")
    _check_fits(model, val, "validation")
    seed = model.cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1])
    all_params = model.parameters()
    unknown = set(cfg.freeze) - set(all_params)
    if unknown:
        raise ConfigError(f"cannot freeze unknown parameters {sorted(unknown)}")
    params = {k: v for k, v in all_params.items() if k not in cfg.freeze}
    opt = AdamW(params, cfg)
    sched = PlateauScheduler(cfg.lr, cfg.sched_factor, cfg.sched_patience)
    best_f1, best_epoch, best_state = -1.0, 0, None
    stale = 0
    epochs, timings = [], []
    names = list(params)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            X = augment_batch(train.X[idx], rng, cfg.augment)
            model.zero_grad()
            loss = smoothed_ce(model.forward(X), train.y[idx], cfg.label_smoothing)
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            nx.backward(loss)
            grads, _ = clip_grad_norm([params[k].grad for k in names], cfg.clip_max_norm)
            for k, g in zip(names, grads):
                params[k].grad = g
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        val_f1, _ = evaluate(model, val)
        record = {"epoch": epoch, "train_loss": total / count, "val_macro_f1": val_f1, "lr": opt.lr}
        epochs.append(record)
        timings.append({"epoch": epoch, "elapsed_s": time.perf_counter() - t0})
        if on_epoch is not None:
            on_epoch(record)
        log.info("epoch %d loss %.4f val F1 %.4f lr %.2e", epoch, record["train_loss"], val_f1, opt.lr)
        if val_f1 > best_f1:
            best_f1, best_epoch, stale = val_f1, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
        opt.lr = sched.step(val_f1)
        if stale >= cfg.early_stop_patience:
            break
    model.load_state_dict(best_state)
    model.eval()
    return FitResult(model, best_f1, best_epoch, epochs, timings)
