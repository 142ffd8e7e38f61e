"""Recurrent cells and feed-forward pieces built on :mod:`ctxrnn.autodiff`.

Hidden vectors are rows: a batch of hidden states has shape ``(batch, H)``
and every affine map is written ``x @ W`` with ``W`` of shape ``(in, out)``.

LSTM gate order inside the packed ``4H`` axis is fixed as
``[input, forget, candidate, output]`` so checkpoints stay portable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor, _sigmoid, primitive

LN_EPS = 1e-5

ACTIVATIONS = {
    "identity": lambda t: t,
    "tanh": ad.tanh,
    "relu": ad.relu,
}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# feed-forward pieces


def dense(x: Tensor, weight: Tensor, bias: Tensor, activation: str = "identity") -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {weight.shape}")
    return ACTIVATIONS[activation](ad.add(ad.matmul(x, weight), bias))


def init_dense(rng, n_in: int, n_out: int, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.w": glorot_uniform(rng, n_in, n_out), f"{prefix}.b": np.zeros(n_out)}


def layer_norm(v: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise each row to zero mean and unit (population) variance, then
    apply ``gain`` and ``bias``. Fused primitive with an analytic adjoint."""
    H = v.shape[-1]
    if gain.shape != (H,) or bias.shape != (H,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {v.shape}")
    x = v.value
    centered = x - x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    gv = gain.value
    out = xhat * gv + bias.value

    def vjp(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return primitive("layer_norm", (v, gain, bias), out, vjp)


def embed(token, table: Tensor) -> Tensor:
    """Row ``token`` of ``table`` (an int or an int array of ids)."""
    return ad.embedding(table, token)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets)
    B, C = logits.shape
    if targets.shape != (B,):
        raise ShapeError(f"softmax_cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    if B and (targets.min() < 0 or targets.max() >= C):
        raise IndexError(f"softmax_cross_entropy: target out of range for {C} classes")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(B)
    loss = -logp[rows, targets].mean()

    def vjp(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (g / B),)

    return primitive("softmax_xent", (logits,), np.asarray(loss), vjp)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# LSTM


class LstmParams(NamedTuple):
    w_x: Tensor  # (E, 4H)
    w_h: Tensor  # (H, 4H)
    b: Tensor  # (4H,)


class LstmState(NamedTuple):
    h: Tensor
    c: Tensor


def init_lstm(rng, input_dim: int, hidden: int, prefix: str = "lstm") -> dict[str, np.ndarray]:
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return {
        f"{prefix}.w_x": glorot_uniform(rng, input_dim, 4 * hidden),
        f"{prefix}.w_h": glorot_uniform(rng, hidden, 4 * hidden),
        f"{prefix}.b": b,
    }


def _check_lstm(x, state, params):
    H = params.w_h.shape[0]
    if state.h.shape[-1] != H or state.c.shape != state.h.shape:
        raise ShapeError(f"lstm_step: state {state.h.shape}/{state.c.shape} vs hidden size {H}")
    if x.shape[-1] != params.w_x.shape[0] or x.shape[0] != state.h.shape[0]:
        raise ShapeError(f"lstm_step: input {x.shape} vs w_x {params.w_x.shape}")
    return H


def _lstm_pointwise(gates: Tensor, c_prev: Tensor) -> Tensor:
    """Gate nonlinearities and cell update fused; returns ``concat([h, c])``."""
    H = c_prev.shape[-1]
    a = gates.value
    ifo = np.empty_like(a[:, :3 * H])
    ifo[:, :2 * H] = a[:, :2 * H]
    ifo[:, 2 * H:] = a[:, 3 * H:]
    ifo = _sigmoid(ifo)
    i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
    cand = np.tanh(a[:, 2 * H:3 * H])
    cp = c_prev.value
    c = f * cp + i * cand
    tc = np.tanh(c)
    out = np.concatenate([o * tc, c], axis=1)

    def vjp(g):
        gh, gc = g[:, :H], g[:, H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        da = np.empty_like(a)
        da[:, :H] = dc * cand * i * (1.0 - i)
        da[:, H:2 * H] = dc * cp * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc * i * (1.0 - cand * cand)
        da[:, 3 * H:] = gh * tc * o * (1.0 - o)
        return da, dc * f

    return primitive("lstm_pointwise", (gates, c_prev), out, vjp)


def lstm_step(x: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    H = _check_lstm(x, state, params)
    gates = ad.add(ad.add(ad.matmul(x, params.w_x), ad.matmul(state.h, params.w_h)), params.b)
    hc = _lstm_pointwise(gates, state.c)
    return LstmState(ad.slice_last(hc, 0, H), ad.slice_last(hc, H, 2 * H))


def lstm_step_composed(x: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    """Same update as :func:`lstm_step` built only from elementary primitives."""
    H = _check_lstm(x, state, params)
    gates = ad.add(ad.add(ad.matmul(x, params.w_x), ad.matmul(state.h, params.w_h)), params.b)
    i = ad.sigmoid(ad.slice_last(gates, 0, H))
    f = ad.sigmoid(ad.slice_last(gates, H, 2 * H))
    cand = ad.tanh(ad.slice_last(gates, 2 * H, 3 * H))
    o = ad.sigmoid(ad.slice_last(gates, 3 * H, 4 * H))
    c = ad.add(ad.mul(f, state.c), ad.mul(i, cand))
    return LstmState(ad.mul(o, ad.tanh(c)), c)


# ---------------------------------------------------------------------------
# Fast weights


@dataclass(frozen=True)
class FwParams:
    W: Tensor  # hidden -> hidden (H, H)
    C: Tensor  # input -> hidden (E, H)
    gain: Tensor  # (H,)
    bias: Tensor  # (H,)
    decay: float = 0.95
    lr: float = 0.5
    steps: int = 1

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ValueError(f"fast-weight decay must lie in [0, 1), got {self.decay}")
        if self.lr < 0:
            raise ValueError(f"fast-weight learning rate must be >= 0, got {self.lr}")
        if self.steps < 1:
            raise ValueError(f"inner-loop steps must be >= 1, got {self.steps}")


def init_fw(rng, input_dim: int, hidden: int, prefix: str = "fw") -> dict[str, np.ndarray]:
    return {
        f"{prefix}.W": glorot_uniform(rng, hidden, hidden),
        f"{prefix}.C": glorot_uniform(rng, input_dim, hidden),
        f"{prefix}.gain": np.ones(hidden),
        f"{prefix}.bias": np.zeros(hidden),
    }


class DenseMemory:
    """Fast-weight matrix held explicitly as a ``(batch, H, H)`` tensor."""

    def __init__(self, A: Tensor):
        self.A = A

    @classmethod
    def zeros(cls, tape: Tape, batch: int, hidden: int) -> "DenseMemory":
        return cls(tape.constant(np.zeros((batch, hidden, hidden))))

    def update(self, h: Tensor, decay: float, lr: float) -> "DenseMemory":
        return DenseMemory(ad.add(ad.scale(self.A, decay), ad.scale(ad.outer(h, h), lr)))

    def matvec(self, v: Tensor) -> Tensor:
        B, H = v.shape
        return ad.reshape(ad.matmul(self.A, ad.reshape(v, (B, H, 1))), (B, H))

    def dense(self) -> Tensor:
        return self.A


@dataclass(frozen=True)
class FactoredMemory:
    """Fast-weight matrix kept as ``sum_k coef_k * outer(key_k, key_k)``.

    Algebraically identical to :class:`DenseMemory` when the sequence starts
    from ``A = 0``, but costs ``O(batch * K * H)`` per product instead of
    ``O(batch * H * H)`` for a history of ``K`` keys.
    """

    keys: tuple[Tensor, ...] = ()
    coefs: tuple[float, ...] = ()
    shape: tuple[int, int, int] | None = field(default=None)

    def update(self, h: Tensor, decay: float, lr: float) -> "FactoredMemory":
        coefs = tuple(c * decay for c in self.coefs) + (lr,)
        B, H = h.shape
        return FactoredMemory(self.keys + (h,), coefs, (B, H, H))

    def matvec(self, v: Tensor) -> Tensor:
        if not self.keys:
            return v.tape.constant(np.zeros(v.shape))
        return lowrank_matvec(self.keys, np.array(self.coefs), v)

    def dense(self) -> Tensor:
        terms = [ad.scale(ad.outer(k, k), c) for k, c in zip(self.keys, self.coefs)]
        out = terms[0]
        for t in terms[1:]:
            out = ad.add(out, t)
        return out


def lowrank_matvec(keys: tuple[Tensor, ...], coefs: np.ndarray, v: Tensor) -> Tensor:
    """``sum_k coefs[k] * key_k * <key_k, v>`` row-wise over the batch."""
    K = np.stack([k.value for k in keys], axis=1)  # (B, K, H)
    vv = v.value
    s = np.einsum("bkh,bh->bk", K, vv) * coefs
    out = np.einsum("bkh,bk->bh", K, s)

    def vjp(g):
        r = np.einsum("bkh,bh->bk", K, g) * coefs
        gv = np.einsum("bkh,bk->bh", K, r)
        gk = g[:, None, :] * s[:, :, None] + vv[:, None, :] * r[:, :, None]
        return tuple(gk[:, j] for j in range(len(keys))) + (gv,)

    return primitive("lowrank_matvec", tuple(keys) + (v,), out, vjp)


class FwState(NamedTuple):
    h: Tensor
    A: DenseMemory | FactoredMemory


def fw_step(x: Tensor, state: FwState, params: FwParams) -> FwState:
    """One fast-weights step: update ``A`` with the previous hidden state,
    then settle the new hidden state with ``steps`` inner iterations."""
    H = params.W.shape[0]
    h = state.h
    if h.shape[-1] != H or x.shape[0] != h.shape[0]:
        raise ShapeError(f"fw_step: state {h.shape} vs W {params.W.shape}")
    if x.shape[-1] != params.C.shape[0]:
        raise ShapeError(f"fw_step: input {x.shape} vs C {params.C.shape}")
    A = state.A.update(h, params.decay, params.lr)
    z = ad.add(ad.matmul(h, params.W), ad.matmul(x, params.C))
    hs = ad.relu(z)
    for _ in range(params.steps):
        hs = ad.relu(layer_norm(ad.add(z, A.matvec(hs)), params.gain, params.bias))
    return FwState(hs, A)
