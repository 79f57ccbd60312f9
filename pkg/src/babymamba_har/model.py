"""Model assembly, analytic cost accounting and the binary model format."""

from __future__ import annotations

import dataclasses
import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import blocks
from . import numerics as nx
from .errors import ConfigError, FormatError, ShapeError
from .numerics import Tensor, mac_scope
from .presets import PRESETS
from .ssm_core import SCAN_METHODS

VARIANTS = ("ci", "crossover")
POOLINGS = ("gated", "mean")

# per-variant defaults: (d_model, d_state)
_VARIANT_DEFAULTS = {"ci": (24, 16), "crossover": (26, 8)}


@dataclass
class ModelConfig:
    variant: str = "crossover"
    num_channels: int = 6
    num_classes: int = 6
    seq_len: int = 128
    d_model: int = 26
    d_state: int = 8
    n_layers: int = 4
    expand: int = 2
    k_stem: int = 5
    k_conv: int = 4
    dt_rank: int | None = None
    d_attn: int | None = None
    bidirectional: bool = True
    pooling: str = "gated"
    scan_method: str = "fused"
    seed: int = 0

    def __post_init__(self):
        if self.dt_rank is None:
            self.dt_rank = math.ceil(self.d_model / 16)
        if self.d_attn is None:
            self.d_attn = self.d_model
        self.validate()

    @classmethod
    def default(cls, variant: str = "crossover", **overrides) -> "ModelConfig":
        if variant not in _VARIANT_DEFAULTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        d_model, d_state = _VARIANT_DEFAULTS[variant]
        base = dict(variant=variant, d_model=d_model, d_state=d_state)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}; expected one of {POOLINGS}")
        if self.scan_method not in SCAN_METHODS:
            raise ConfigError(f"unknown scan method {self.scan_method!r}")
        for name in ("num_channels", "num_classes", "seq_len", "d_model", "d_state", "n_layers",
                     "expand", "k_stem", "k_conv", "dt_rank", "d_attn"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.k_stem % 2 == 0:
            raise ConfigError(f"k_stem must be odd, got {self.k_stem}")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class Model:
    """CI or Crossover BabyMamba-HAR network with deterministic initialisation."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.training = False
        rng = np.random.default_rng(cfg.seed)
        stem_in = 1 if cfg.variant == "ci" else cfg.num_channels
        self.stem = blocks.init_stem(cfg.d_model, stem_in, cfg.k_stem, rng)
        self.blocks = [blocks.init_ssm_block(cfg.d_model, cfg.d_state, cfg.expand, cfg.k_conv,
                                             cfg.dt_rank, rng) for _ in range(cfg.n_layers)]
        bound = math.sqrt(1.0 / cfg.d_model)
        self.head_W = nx.parameter(rng.uniform(-bound, bound, size=(cfg.num_classes, cfg.d_model)))
        self.head_b = nx.parameter(np.zeros(cfg.num_classes))
        # drawn last so gated and mean-pooled builds share every other weight
        self.pool = blocks.init_pooling(cfg.d_model, cfg.d_attn, rng) if cfg.pooling == "gated" else None

    def train(self, mode: bool = True) -> "Model":
        self.training = mode
        return self

    def eval(self) -> "Model":
        return self.train(False)

    def parameters(self) -> dict[str, Tensor]:
        out = self.stem.named("stem.")
        for i, b in enumerate(self.blocks):
            out.update(b.named(f"blocks.{i}."))
        if self.pool is not None:
            out.update(self.pool.named("pool."))
        out["head.W"] = self.head_W
        out["head.b"] = self.head_b
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return self.stem.buffers("stem.")

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def forward(self, X) -> Tensor:
        """Logits for one window (C, L) -> (K,) or a batch (B, C, L) -> (B, K)."""
        cfg = self.cfg
        X = nx.as_tensor(X)
        if X.ndim not in (2, 3) or X.shape[-2:] != (cfg.num_channels, cfg.seq_len):
            raise ShapeError(f"model expects windows of shape ({cfg.num_channels}, {cfg.seq_len}), "
                             f"got {X.shape}")
        single = X.ndim == 2
        if single:
            X = X.reshape(1, *X.shape)
        nb = X.shape[0]
        if cfg.variant == "ci":
            Z = blocks.stem_ci(X, self.stem, self.training)
        else:
            Z = blocks.stem_crossover(X, self.stem, self.training)
        for i, p in enumerate(self.blocks):
            with mac_scope(f"block{i}"):
                Z = blocks.bidir_block(Z, p, cfg.bidirectional, cfg.scan_method)
        h = blocks.attention_pool(Z, self.pool) if self.pool is not None else blocks.mean_pool(Z)
        if cfg.variant == "ci":
            h = blocks.late_fuse(h.reshape(nb, cfg.num_channels, cfg.d_model))
        logits = blocks.classify(h, self.head_W, self.head_b)
        return logits.reshape(cfg.num_classes) if single else logits

    __call__ = forward

    def predict(self, X, batch_size: int = 256) -> np.ndarray:
        """Argmax class per window, inference mode, no tape."""
        X = np.asarray(X)
        was = self.training
        self.eval()
        preds = []
        with nx.no_grad():
            for i in range(0, len(X), batch_size):
                preds.append(self.forward(X[i:i + batch_size]).data.argmax(axis=-1))
        self.train(was)
        return np.concatenate(preds) if preds else np.zeros(0, dtype=int)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.parameters().items()}
        out.update(self.buffers())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params, bufs = self.parameters(), self.buffers()
        expected = set(params) | set(bufs)
        if set(state) != expected:
            raise FormatError(f"state mismatch: missing {sorted(expected - set(state))}, "
                              f"unexpected {sorted(set(state) - expected)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise FormatError(f"{k}: stored shape {state[k].shape} != model shape {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
        for k, b in bufs.items():
            b[...] = state[k]


def build(cfg: ModelConfig) -> Model:
    return Model(cfg)


# ---------------------------------------------------------------------------
# analytic cost model


@dataclass
class CostRow:
    name: str
    params: int
    macs: int


@dataclass
class CostReport:
    channels: int
    seq_len: int
    convention: str
    rows: list[CostRow] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def _sub(self, backbone: bool, attr: str) -> int:
        return sum(getattr(r, attr) for r in self.rows if r.name.startswith("block") == backbone)

    @property
    def backbone_macs(self) -> int:
        return self._sub(True, "macs")

    @property
    def other_macs(self) -> int:
        return self._sub(False, "macs")

    @property
    def backbone_params(self) -> int:
        return self._sub(True, "params")

    def row(self, name: str) -> CostRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "channels": self.channels, "seq_len": self.seq_len, "convention": self.convention,
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "total_params": self.total_params, "total_macs": self.total_macs,
            "backbone_macs": self.backbone_macs, "other_macs": self.other_macs,
        }


BLOCK_PARTS = ("in_proj", "dw_conv", "selective_proj", "scan", "out_proj", "norm")
MAC_CONVENTIONS = ("layers", "full")


def param_row(name: str) -> str:
    """Map a parameter name to its cost-report row."""
    head = name.split(".")[0]
    if head != "blocks":
        return head
    _, i, rest = name.split(".", 2)
    part = {"in_proj": "in_proj", "conv_w": "dw_conv", "conv_b": "dw_conv", "out_proj": "out_proj",
            "norm_g": "norm", "norm_b": "norm", "kernel.A_log": "scan", "kernel.D": "scan"}.get(rest, "selective_proj")
    return f"block{i}.{part}"


def count_params(cfg: ModelConfig) -> list[CostRow]:
    """Closed-form parameter count per row (MACs left at zero)."""
    d, di, n, r, k = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.dt_rank, cfg.k_stem
    stem_in = 1 if cfg.variant == "ci" else cfg.num_channels
    rows = [CostRow("stem", d * stem_in * k + d + 2 * d, 0)]
    per_block = {
        "in_proj": d * 2 * di,
        "dw_conv": di * cfg.k_conv + di,
        "selective_proj": 2 * di * n + di * r + r * di + di,
        "scan": di * n + di,
        "out_proj": di * d,
        "norm": 2 * d,
    }
    for i in range(cfg.n_layers):
        rows.extend(CostRow(f"block{i}.{part}", per_block[part], 0) for part in BLOCK_PARTS)
    if cfg.pooling == "gated":
        rows.append(CostRow("pool", d * cfg.d_attn + 2 * cfg.d_attn, 0))
    rows.append(CostRow("head", d * cfg.num_classes + cfg.num_classes, 0))
    return rows


def count_macs(cfg: ModelConfig, channels: int | None = None, seq_len: int | None = None,
               convention: str = "layers") -> CostReport:
    """Analytic MACs for one window of shape (channels, seq_len).

    ``full`` counts every multiply-accumulate the forward pass executes:
    both scan directions, each with its own projections, conv and the
    3·L·d_inner·d_state recurrence. ``layers`` counts each parameterised
    layer once per block and leaves out the recurrences, the way
    module-hook profilers report cost. Elementwise work is excluded in both.
    """
    if convention not in MAC_CONVENTIONS:
        raise ConfigError(f"unknown MAC convention {convention!r}; expected one of {MAC_CONVENTIONS}")
    C = cfg.num_channels if channels is None else channels
    L = cfg.seq_len if seq_len is None else seq_len
    cfg = cfg.replace(num_channels=C, seq_len=L)
    d, di, n, r = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.dt_rank
    seqs = C if cfg.variant == "ci" else 1
    dirs = 2 if (cfg.bidirectional and convention == "full") else 1
    block_macs = {
        "in_proj": L * d * 2 * di,
        "dw_conv": L * di * cfg.k_conv,
        "selective_proj": L * (di * r + r * di + 2 * di * n),
        "scan": 3 * L * di * n if convention == "full" else 0,
        "out_proj": L * di * d,
        "norm": 0,
    }
    macs = {"stem": d * C * cfg.k_stem * L,
            "pool": seqs * (L * d * cfg.d_attn + L * cfg.d_attn + L * d),
            "head": d * cfg.num_classes}
    rows = []
    for row in count_params(cfg):
        if row.name.startswith("block"):
            part = row.name.split(".", 1)[1]
            row.macs = seqs * dirs * block_macs[part]
        else:
            row.macs = macs[row.name]
        rows.append(row)
    return CostReport(C, L, convention, rows)


def preset_mac_table(cfg: ModelConfig, convention: str = "layers") -> dict[str, int]:
    """Total MACs at every preset shape (channels, length, classes) plus their mean."""
    table = {}
    for name, p in PRESETS.items():
        c = cfg.replace(num_channels=p.channels, seq_len=p.seq_len, num_classes=p.classes)
        table[name] = count_macs(c, convention=convention).total_macs
    table["average"] = sum(table.values()) / len(PRESETS)
    return table


# ---------------------------------------------------------------------------
# serialisation

MAGIC = b"BMHAR\x00"
FORMAT_VERSION = 1


def serialize(model: Model) -> bytes:
    """Magic, version, canonical config JSON, then named little-endian f8 tensors."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    cfg = model.cfg.canonical_json().encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    state = model.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        key = name.encode()
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(b"f8")
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("model file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> Model:
    rd = _Reader(data)
    if rd.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a BabyMamba-HAR model file (bad magic)")
    (version,) = rd.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    (n_cfg,) = rd.unpack("<I")
    try:
        cfg = ModelConfig.from_dict(json.loads(rd.take(n_cfg).decode()))
    except (ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise FormatError(f"stored config is invalid: {e}") from e
        raise FormatError(f"stored config is not valid JSON: {e}") from e
    (count,) = rd.unpack("<I")
    state = {}
    for _ in range(count):
        (n_key,) = rd.unpack("<H")
        name = rd.take(n_key).decode()
        if rd.take(2) != b"f8":
            raise FormatError(f"{name}: unsupported dtype")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(rd.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if rd.pos != len(data):
        raise FormatError("trailing bytes after model payload")
    model = Model(cfg)
    model.load_state_dict(state)
    return model


def save(model: Model, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(model))


def load(path) -> Model:
    try:
        with open(path, "rb") as f:
            return deserialize(f.read())
    except FileNotFoundError:
        raise FormatError(f"model file not found: {path}") from None
