"""Dense tensors with tape-based reverse-mode differentiation.

Every primitive computes its forward value with numpy and registers a closure
that maps the output gradient to input gradients. ``backward`` walks the
recorded DAG in reverse topological order and accumulates.

MAC accounting is built in: multiply-accumulate heavy primitives (matmul,
linear, conv, scan) report their work to any active :class:`MacCounter`, which
lets the analytic cost model be checked against what actually ran.
"""

from __future__ import annotations

import contextlib
from collections import defaultdict
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, EvaluationError, ShapeError

DEFAULT_DTYPE = np.float64

_grad_enabled = True
_mac_counters: list["MacCounter"] = []
_mac_scope: list[str] = []


def set_default_dtype(dtype) -> None:
    """Switch new tensors to ``dtype`` (float32 or float64)."""
    global DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype}")
    DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


# ---------------------------------------------------------------------------
# MAC instrumentation


class MacCounter:
    """Tally of multiply-accumulates, keyed by the active scope path."""

    def __init__(self) -> None:
        self.by_scope: dict[str, int] = defaultdict(int)

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def add(self, n: int) -> None:
        self.by_scope["/".join(_mac_scope)] += int(n)


@contextlib.contextmanager
def count_macs():
    counter = MacCounter()
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


@contextlib.contextmanager
def mac_scope(name: str):
    _mac_scope.append(name)
    try:
        yield
    finally:
        _mac_scope.pop()


def tally_macs(n: int) -> None:
    for c in _mac_counters:
        c.add(n)


# ---------------------------------------------------------------------------
# Tensor


class Tensor:
    """An n-d float array plus the record of the operation that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Wrap the result of a primitive and record it on the tape.

        ``backward(g)`` must return one gradient (or None) per parent.
        """
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._parents = ()
        out._backward = None
        out.requires_grad = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() needs a single element, got shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def flip(self, axis):
        return flip(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# backward


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, wrt: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

    If ``wrt`` is given, their gradients are also returned (zeros for leaves
    that do not influence ``root``).
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {}
    if root.requires_grad:
        grads[id(root)] = np.ones_like(root.data)
        for node in reversed(_toposort(root)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                if gp.shape != p.shape:
                    raise ShapeError(f"gradient shape {gp.shape} does not match value shape {p.shape}")
                prev = grads.get(id(p))
                grads[id(p)] = gp if prev is None else prev + gp
    if wrt is None:
        return None
    return [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt]


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return Tensor.from_op(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return Tensor.from_op(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return Tensor.from_op(a.data * b.data, (a, b),
                          lambda g: (_unbroadcast(g * b.data, a.shape),
                                     _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data
    return Tensor.from_op(out, (a, b),
                          lambda g: (_unbroadcast(g / b.data, a.shape),
                                     _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    return Tensor.from_op(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return Tensor.from_op(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),))


def softplus(a: Tensor) -> Tensor:
    return Tensor.from_op(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def flip(a: Tensor, axis: int) -> Tensor:
    """Reverse along ``axis`` (temporal reversal when axis is time)."""
    return Tensor.from_op(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),))


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis), type(None))) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def bw(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return Tensor.from_op(a.data[idx], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                          lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return Tensor.from_op(np.stack([t.data for t in tensors], axis=axis), tensors,
                          lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = np.matmul(a.data, b.data)
    tally_macs(out.size * a.shape[-1])

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` applied over the last axis; ``w`` is (out, in)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[1])
    out = x2 @ w.data.T
    if b is not None:
        out = out + b.data
    tally_macs(x2.shape[0] * w.shape[0] * w.shape[1])
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, w.shape[0])
        grads = [(g2 @ w.data).reshape(x.shape), g2.T @ x2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return Tensor.from_op(out.reshape(*lead, w.shape[0]), parents, bw)


# ---------------------------------------------------------------------------
# convolutions


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded cross-correlation.

    x is (Cin, L) or (B, Cin, L); w is (Cout, Cin, k) with odd k.
    """
    if w.ndim != 3:
        raise ShapeError(f"conv1d: weight must be (Cout, Cin, k), got {w.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ConfigError(f"conv1d: same padding needs an odd kernel, got k={k}")
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not fit weight {w.shape}")
    nb, cin, n = xd.shape
    p = (k - 1) // 2
    cols = sliding_window_view(np.pad(xd, ((0, 0), (0, 0), (p, p))), k, axis=2)  # B,Cin,L,k
    out = np.tensordot(cols, w.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)  # B,Cout,L
    if b is not None:
        out = out + b.data[:, None]
    tally_macs(nb * w.shape[0] * cin * k * n)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g3 = g[None] if unbatched else g
        gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2]))  # Cout,Cin,k
        gcols = np.tensordot(g3, w.data, axes=([1], [0]))  # B,L,Cin,k
        gxp = np.zeros((nb, cin, n + 2 * p), dtype=xd.dtype)
        for j in range(k):
            gxp[:, :, j:j + n] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, p:p + n]
        grads = [gx[0] if unbatched else gx, gw]
        if b is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return grads

    return Tensor.from_op(out[0] if unbatched else out, parents, bw)


def depthwise_conv1d_causal(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Causal per-channel convolution on channel-last input.

    x is (..., L, D); w is (D, k); output[t] sees inputs t-k+1..t.
    """
    d, k = w.shape
    if x.shape[-1] != d:
        raise ShapeError(f"depthwise conv: input {x.shape} does not fit weight {w.shape}")
    n = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(k - 1, 0), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.zeros_like(x.data)
    for j in range(k):
        out += w.data[:, j] * xp[..., j:j + n, :]
    if b is not None:
        out += b.data
    tally_macs(x.size * k)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        red = tuple(range(g.ndim - 1))
        for j in range(k):
            gxp[..., j:j + n, :] += g * w.data[:, j]
            gw[:, j] = (g * xp[..., j:j + n, :]).sum(axis=red)
        grads = [gxp[..., k - 1:, :], gw]
        if b is not None:
            grads.append(g.sum(axis=red))
        return grads

    return Tensor.from_op(out, parents, bw)


# ---------------------------------------------------------------------------
# normalisation and softmax


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return Tensor.from_op(out, (a,),
                          lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    return Tensor.from_op(out, (a,),
                          lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),))


def _normalize_backward(g_hat, xhat, inv, axes):
    n = int(np.prod([xhat.shape[i] for i in axes]))
    s1 = g_hat.sum(axis=axes, keepdims=True)
    s2 = (g_hat * xhat).sum(axis=axes, keepdims=True)
    return inv * (g_hat - s1 / n - xhat * s2 / n)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != gamma.shape:
        raise ShapeError(f"layer_norm: input {x.shape} does not fit scale {gamma.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    red = tuple(range(x.ndim - 1))

    def bw(g):
        gx = _normalize_backward(g * gamma.data, xhat, inv, (-1 % x.ndim,))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor.from_op(xhat * gamma.data + beta.data, (x, gamma, beta), bw)


def batch_norm_1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                  running_var: np.ndarray, training: bool, momentum: float = 0.1,
                  eps: float = 1e-5) -> Tensor:
    """Per-feature normalisation of (B, F, L) input over batch and time.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); otherwise the running buffers are
    used.
    """
    if x.ndim != 3 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm_1d: input {x.shape} does not fit {gamma.shape[0]} features")
    axes = (0, 2)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        n = x.shape[0] * x.shape[2]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(-1)
    else:
        mu = running_mean.reshape(1, -1, 1)
        var = running_var.reshape(1, -1, 1)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    g_ = gamma.data.reshape(1, -1, 1)
    out = xhat * g_ + beta.data.reshape(1, -1, 1)

    def bw(g):
        g_hat = g * g_
        gx = _normalize_backward(g_hat, xhat, inv, axes) if training else g_hat * inv
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor.from_op(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# finite-difference oracle


def _scalar(t: Tensor) -> float:
    v = t.item()
    if not np.isfinite(v):
        raise EvaluationError(f"function evaluated to {v}")
    return v


def _rel_err(g_ad: np.ndarray, g_fd: np.ndarray) -> float:
    if g_ad.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom))


def grad_check(f: Callable[[Tensor], Tensor], theta, h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    base = np.array(as_tensor(theta).data, dtype=np.float64)
    t = Tensor(base, requires_grad=True)
    out = f(t)
    _scalar(out)
    g_ad = backward(out, [t])[0]
    g_fd = np.empty_like(base)
    with no_grad():
        for i in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[i] += h
            minus[i] -= h
            g_fd[i] = (_scalar(f(Tensor(plus))) - _scalar(f(Tensor(minus)))) / (2 * h)
    return _rel_err(g_ad, g_fd)


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                      coords_per_param: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Like :func:`grad_check` for a closure over several parameter leaves.

    Parameters are perturbed by rebinding their ``data``. With
    ``coords_per_param`` only that many randomly chosen coordinates of each
    parameter are probed.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    out = loss_fn()
    _scalar(out)
    g_ads = backward(out, params)
    worst = 0.0
    with no_grad():
        for p, g_ad in zip(params, g_ads):
            base = p.data
            flat = np.arange(base.size)
            if coords_per_param is not None and coords_per_param < base.size:
                flat = rng.choice(base.size, coords_per_param, replace=False)
            fd = np.empty(len(flat))
            for j, i in enumerate(flat):
                vals = []
                for step in (h, -h):
                    pert = base.copy()
                    pert.flat[i] += step
                    p.data = pert
                    vals.append(_scalar(loss_fn()))
                fd[j] = (vals[0] - vals[1]) / (2 * h)
            p.data = base
            worst = max(worst, _rel_err(g_ad.reshape(-1)[flat], fd))
    return worst
