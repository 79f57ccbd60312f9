"""Selective state-space kernel with diagonal A and exact zero-order hold.

Reference evaluations (``scan_sequential``, ``scan_parallel``) work on plain
numpy arrays with time on the leading axis. ``selective_scan`` is the
differentiable primitive the blocks use; it fuses discretisation, recurrence
and readout so that the (L, d_inner, d_state) intermediates never need to be
kept except for the hidden states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, ShapeError
from .numerics import Tensor

SERIES_TAU = 1e-4
SCAN_METHODS = ("fused", "sequential", "parallel")


@dataclass
class SsmKernelParams:
    A_log: Tensor  # (d_inner, d_state); A = -exp(A_log)
    D: Tensor  # (d_inner,)
    W_B: Tensor  # (d_state, d_inner)
    W_C: Tensor  # (d_state, d_inner)
    W_dt_low: Tensor  # (dt_rank, d_inner)
    W_dt_up: Tensor  # (d_inner, dt_rank)
    dt_bias: Tensor  # (d_inner,)

    @property
    def d_inner(self) -> int:
        return self.A_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.A_log.shape[1]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + k: getattr(self, k) for k in self.__dataclass_fields__}


def init_kernel_params(d_inner: int, d_state: int, dt_rank: int, rng: np.random.Generator,
                       dt_min: float = 1e-3, dt_max: float = 1e-1) -> SsmKernelParams:
    """S4D-real A (a_n = -(n+1)) and a Δ bias whose softplus is log-uniform."""
    if min(d_inner, d_state, dt_rank) < 1:
        raise ConfigError(f"kernel extents must be >= 1, got {d_inner=} {d_state=} {dt_rank=}")
    a_log = np.log(np.tile(np.arange(1, d_state + 1, dtype=float), (d_inner, 1)))

    def uni(out, fan_in):
        bound = math.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=(out, fan_in))

    w_b = uni(d_state, d_inner)
    w_c = uni(d_state, d_inner)
    w_low = uni(dt_rank, d_inner)
    w_up = uni(d_inner, dt_rank)
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
    bias = dt + np.log(-np.expm1(-dt))  # inverse softplus
    return SsmKernelParams(
        A_log=nx.parameter(a_log), D=nx.parameter(np.ones(d_inner)),
        W_B=nx.parameter(w_b), W_C=nx.parameter(w_c),
        W_dt_low=nx.parameter(w_low), W_dt_up=nx.parameter(w_up), dt_bias=nx.parameter(bias),
    )


def selective_params(x: Tensor, p: SsmKernelParams) -> tuple[Tensor, Tensor, Tensor]:
    """Input-dependent step size and input/readout vectors for x of shape (..., L, d_inner)."""
    low = nx.linear(x, p.W_dt_low)
    delta = nx.softplus(nx.linear(low, p.W_dt_up, p.dt_bias))
    return delta, nx.linear(x, p.W_B), nx.linear(x, p.W_C)


def state_matrix(p: SsmKernelParams) -> Tensor:
    return -nx.exp(p.A_log)


# ---------------------------------------------------------------------------
# reference (numpy) kernels


def _phi(z: np.ndarray, tau: float) -> np.ndarray:
    """expm1(z)/z with a second-order series near zero."""
    small = np.abs(z) <= tau
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(zs) / zs)


def _dphi(z: np.ndarray, tau: float) -> np.ndarray:
    small = np.abs(z) <= tau
    zs = np.where(small, 1.0, z)
    return np.where(small, 0.5, (zs * np.exp(zs) - np.expm1(zs)) / (zs * zs))


def discretize_zoh(delta, a, b, tau: float = SERIES_TAU):
    """Exact ZOH for diagonal A: returns (exp(Δa), (exp(Δa)-1)/a · b).

    Falls back to Δ·b·(1 + Δa/2) when |Δa| <= tau. Broadcasts elementwise.
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ContractError("discretize_zoh needs a strictly positive step")
    z = delta * np.asarray(a, dtype=float)
    return np.exp(z), delta * _phi(z, tau) * np.asarray(b, dtype=float)


def combine(e1, e2):
    """Compose two affine maps h -> a h + b: first e1, then e2."""
    a1, b1 = e1
    a2, b2 = e2
    return a2 * a1, a2 * b1 + b2


def linear_recurrence_sequential(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """h_t = a_t h_{t-1} + b_t along axis 0, h_{-1} = 0."""
    h = np.empty(np.broadcast_shapes(a.shape, b.shape))
    prev = np.zeros(h.shape[1:])
    for t in range(h.shape[0]):
        prev = a[t] * prev + b[t]
        h[t] = prev
    return h


def linear_recurrence_parallel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Blelloch work-efficient scan of the same recurrence.

    Pads the time axis to a power of two with identity elements (1, 0),
    builds subtree totals on the way up and pushes exclusive prefixes down.
    """
    shape = np.broadcast_shapes(a.shape, b.shape)
    n = shape[0]
    size = 1 << max(0, (n - 1).bit_length())
    A = np.ones((size,) + shape[1:])
    B = np.zeros((size,) + shape[1:])
    A[:n] = np.broadcast_to(a, shape)
    B[:n] = np.broadcast_to(b, shape)
    ea, eb = A.copy(), B.copy()

    stride = 2
    while stride <= size:
        right = slice(stride - 1, size, stride)
        left = slice(stride // 2 - 1, size, stride)
        A[right], B[right] = combine((A[left], B[left]), (A[right], B[right]))
        stride *= 2

    A[-1], B[-1] = 1.0, 0.0
    stride = size
    while stride >= 2:
        right = slice(stride - 1, size, stride)
        left = slice(stride // 2 - 1, size, stride)
        la, lb = A[left].copy(), B[left].copy()
        A[left], B[left] = A[right], B[right]
        A[right], B[right] = combine((A[right], B[right]), (la, lb))
        stride //= 2

    # exclusive prefix applied to the zero state, then the element itself
    _, h = combine((A, B), (ea, eb))
    return h[:n]


def _readout(h, C, D, x):
    return np.einsum("...dn,...n->...d", h, C) + D * x


def scan_sequential(a_bar, bx, C, D, x) -> np.ndarray:
    """Left-to-right recurrence and readout.

    a_bar, bx: (L, d_inner, d_state); C: (L, d_state); D: (d_inner,); x: (L, d_inner).
    """
    return _readout(linear_recurrence_sequential(np.asarray(a_bar), np.asarray(bx)), C, D, x)


def scan_parallel(a_bar, bx, C, D, x) -> np.ndarray:
    """Same contract as :func:`scan_sequential`, via the associative scan."""
    return _readout(linear_recurrence_parallel(np.asarray(a_bar), np.asarray(bx)), C, D, x)


# ---------------------------------------------------------------------------
# fused kernels


_jit = numba.njit(cache=True, error_model="numpy")


@_jit
def _zoh_terms(z, em, tau):
    """exp(z), expm1(z)/z and d/dz of the latter, given em = expm1(z)."""
    if abs(z) <= tau:
        return em + 1.0, 1.0 + 0.5 * z, 0.5
    return em + 1.0, em / z, (z * (em + 1.0) - em) / (z * z)


@_jit
def _fused_forward(u, dl, A, Bm, Cm, em, tau, h, y):
    nb, n_t, n_d = u.shape
    n_s = A.shape[1]
    for b in range(nb):
        hp = np.zeros((n_d, n_s))
        for t in range(n_t):
            for d in range(n_d):
                delta = dl[b, t, d]
                ut = u[b, t, d]
                acc = 0.0
                for s in range(n_s):
                    ab, phi, _ = _zoh_terms(delta * A[d, s], em[b, t, d, s], tau)
                    v = ab * hp[d, s] + delta * phi * Bm[b, t, s] * ut
                    hp[d, s] = v
                    h[b, t, d, s] = v
                    acc += Cm[b, t, s] * v
                y[b, t, d] += acc


@_jit
def _fused_backward(u, dl, A, Bm, Cm, em, tau, h, gy, gu, gdl, gA, gB, gC):
    nb, n_t, n_d = u.shape
    n_s = A.shape[1]
    for b in range(nb):
        gh = np.zeros((n_d, n_s))
        ab_next = np.zeros((n_d, n_s))
        for t in range(n_t - 1, -1, -1):
            for d in range(n_d):
                gyt = gy[b, t, d]
                delta = dl[b, t, d]
                ut = u[b, t, d]
                gdl_acc = 0.0
                gu_acc = 0.0
                for s in range(n_s):
                    a = A[d, s]
                    g = gh[d, s] * ab_next[d, s] + Cm[b, t, s] * gyt
                    gh[d, s] = g
                    gC[b, t, s] += h[b, t, d, s] * gyt
                    ab, phi, dphi = _zoh_terms(delta * a, em[b, t, d, s], tau)
                    hprev = h[b, t - 1, d, s] if t > 0 else 0.0
                    bu = Bm[b, t, s] * ut
                    coef = delta * phi
                    gz = g * (hprev * ab + delta * dphi * bu)
                    gdl_acc += g * phi * bu + gz * a
                    gA[d, s] += gz * delta
                    gB[b, t, s] += g * coef * ut
                    gu_acc += g * coef * Bm[b, t, s]
                    ab_next[d, s] = ab
                gdl[b, t, d] += gdl_acc
                gu[b, t, d] += gu_acc


def _numpy_scan(u, dl, A, Bm, Cm, tau, recurrence):
    z = dl[..., None] * A  # (nb, L, D, N)
    a_bar = np.exp(z)
    bx = dl[..., None] * _phi(z, tau) * Bm[:, :, None, :] * u[..., None]
    h = recurrence(np.moveaxis(a_bar, 1, 0), np.moveaxis(bx, 1, 0))
    return np.ascontiguousarray(np.moveaxis(h, 0, 1))


def _numpy_scan_backward(u, dl, A, Bm, Cm, tau, h, gy, recurrence):
    z = dl[..., None] * A
    a_bar = np.exp(z)
    phi, dphi = _phi(z, tau), _dphi(z, tau)
    src = gy[..., None] * Cm[:, :, None, :]
    a_next = np.zeros_like(a_bar)
    a_next[:, :-1] = a_bar[:, 1:]
    rev = recurrence(np.moveaxis(a_next[:, ::-1], 1, 0), np.moveaxis(src[:, ::-1], 1, 0))
    gh = np.moveaxis(rev, 0, 1)[:, ::-1]
    hprev = np.zeros_like(h)
    hprev[:, 1:] = h[:, :-1]
    bu = Bm[:, :, None, :] * u[..., None]
    coef = dl[..., None] * phi
    gz = gh * hprev * a_bar + gh * dl[..., None] * dphi * bu
    gdl = (gh * phi * bu + gz * A).sum(-1)
    gA = (gz * dl[..., None]).sum((0, 1))
    gB = (gh * coef * u[..., None]).sum(2)
    gu = (gh * coef * Bm[:, :, None, :]).sum(-1)
    gC = np.einsum("bldn,bld->bln", h, gy)
    return gu, gdl, gA, gB, gC


_RECURRENCES = {"sequential": linear_recurrence_sequential, "parallel": linear_recurrence_parallel}


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, D: Tensor,
                   method: str = "fused", tau: float = SERIES_TAU) -> Tensor:
    """Differentiable selective scan.

    u, delta: (..., L, d_inner); A: (d_inner, d_state) negative;
    Bm, Cm: (..., L, d_state); D: (d_inner,). Returns (..., L, d_inner) with
    y_t = C_t · h_t + D ⊙ u_t and h_t = exp(Δ_t A) h_{t-1} + B̄_t u_t.
    """
    if method not in SCAN_METHODS:
        raise ConfigError(f"unknown scan method {method!r}; expected one of {SCAN_METHODS}")
    lead = u.shape[:-2]
    n_t, n_d = u.shape[-2:]
    n_s = A.shape[1]
    if (delta.shape != u.shape or A.shape[0] != n_d or Bm.shape != lead + (n_t, n_s)
            or Cm.shape != Bm.shape or D.shape != (n_d,)):
        raise ShapeError(f"selective_scan: u {u.shape}, delta {delta.shape}, A {A.shape}, "
                         f"B {Bm.shape}, C {Cm.shape}, D {D.shape} are inconsistent")
    ud = np.ascontiguousarray(u.data.reshape(-1, n_t, n_d))
    dd = np.ascontiguousarray(delta.data.reshape(-1, n_t, n_d))
    bd = np.ascontiguousarray(Bm.data.reshape(-1, n_t, n_s))
    cd = np.ascontiguousarray(Cm.data.reshape(-1, n_t, n_s))
    ad = np.ascontiguousarray(A.data)
    nb = ud.shape[0]
    if np.any(dd <= 0):
        raise ContractError("selective_scan needs a strictly positive step")
    if method == "fused":
        em = np.expm1(dd[..., None] * ad)
        h = np.empty((nb, n_t, n_d, n_s))
        y = np.zeros((nb, n_t, n_d))
        _fused_forward(ud, dd, ad, bd, cd, em, tau, h, y)
    else:
        h = _numpy_scan(ud, dd, ad, bd, cd, tau, _RECURRENCES[method])
        y = np.einsum("bldn,bln->bld", h, cd)
    y += D.data * ud
    nx.tally_macs(3 * nb * n_t * n_d * n_s)

    def bw(g):
        gy = np.ascontiguousarray(g.reshape(nb, n_t, n_d))
        if method == "fused":
            gu = np.zeros_like(ud)
            gdl = np.zeros_like(dd)
            gA = np.zeros_like(ad)
            gB = np.zeros_like(bd)
            gC = np.zeros_like(cd)
            _fused_backward(ud, dd, ad, bd, cd, em, tau, h, gy, gu, gdl, gA, gB, gC)
        else:
            gu, gdl, gA, gB, gC = _numpy_scan_backward(ud, dd, ad, bd, cd, tau, h, gy,
                                                       _RECURRENCES[method])
        gu = gu + gy * D.data
        gD = (gy * ud).sum((0, 1))
        return (gu.reshape(u.shape), gdl.reshape(u.shape), gA, gB.reshape(Bm.shape),
                gC.reshape(Cm.shape), gD)

    return Tensor.from_op(y.reshape(u.shape), (u, delta, A, Bm, Cm, D), bw)
