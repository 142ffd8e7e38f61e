"""Initial-state strategies for recurrent cells.

A strategy turns a batch of context into the cell's full initial state:

* ``zero``: constant zero state.
* ``free``: one trainable state vector tiled over the batch, with optional
  Gaussian noise added to each copy.
* ``learned``: a context network ``g`` maps per-example context to the state.
* ``learned-distribution``: the state is drawn from ``N(g(context), softplus(sigma))``
  with the reparameterisation ``mu + softplus(sigma) * eps`` so gradients
  reach both ``g`` and ``sigma``.

For an LSTM the initialised state is the ``(h, c)`` pair (a ``2H`` vector
split in half); for fast weights it is ``h`` only and the fast-weight
matrix always starts at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor
from .cells import (
    DenseMemory,
    FactoredMemory,
    FwState,
    LstmState,
    dense,
    embed,
    init_dense,
)

STRATEGIES = ("zero", "free", "learned", "learned-distribution")


@dataclass(frozen=True)
class CellSpec:
    """Which cell a state is built for."""

    kind: str  # "lstm" | "fw"
    hidden: int
    memory: str = "factored"  # fast-weight storage: "factored" | "dense"

    def __post_init__(self):
        if self.kind not in ("lstm", "fw"):
            raise ValueError(f"unknown cell kind {self.kind!r}")

    @property
    def state_size(self) -> int:
        return 2 * self.hidden if self.kind == "lstm" else self.hidden

    def from_vector(self, vec: Tensor):
        """Split a ``(batch, state_size)`` vector into a cell state."""
        if vec.shape[-1] != self.state_size:
            raise ShapeError(f"state vector {vec.shape} does not match state size {self.state_size}")
        H = self.hidden
        if self.kind == "lstm":
            return LstmState(ad.slice_last(vec, 0, H), ad.slice_last(vec, H, 2 * H))
        batch = vec.shape[0]
        if self.memory == "dense":
            return FwState(vec, DenseMemory.zeros(vec.tape, batch, H))
        return FwState(vec, FactoredMemory())


# ---------------------------------------------------------------------------
# context networks


@dataclass(frozen=True)
class TokenContext:
    """``g(x_0) = tanh(embed(x_0) @ W + b)`` using the model's own embedding table."""

    embedding_key: str = "embed.table"
    prefix: str = "init.ctx"

    def init_params(self, rng, embedding_dim: int, out_dim: int) -> dict[str, np.ndarray]:
        return init_dense(rng, embedding_dim, out_dim, f"{self.prefix}.out")

    def __call__(self, nodes: dict[str, Tensor], ctx) -> Tensor:
        ids = np.asarray(ctx)
        if ids.ndim != 1:
            raise ShapeError(f"token context must be a 1-d array of ids, got shape {ids.shape}")
        e = embed(ids, nodes[self.embedding_key])
        return dense(e, nodes[f"{self.prefix}.out.w"], nodes[f"{self.prefix}.out.b"], "tanh")


@dataclass(frozen=True)
class FeatureContext:
    """Two-layer MLP over real-valued context features (tanh hidden layer)."""

    n_features: int = 2
    hidden: int = 50
    prefix: str = "init.ctx"

    def init_params(self, rng, out_dim: int) -> dict[str, np.ndarray]:
        p = init_dense(rng, self.n_features, self.hidden, f"{self.prefix}.hidden")
        p.update(init_dense(rng, self.hidden, out_dim, f"{self.prefix}.out"))
        return p

    def __call__(self, nodes: dict[str, Tensor], ctx) -> Tensor:
        tape = nodes[f"{self.prefix}.hidden.w"].tape
        feats = np.asarray(ctx, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.n_features:
            raise ShapeError(f"feature context must have shape (batch, {self.n_features}), got {feats.shape}")
        p = self.prefix
        hid = dense(tape.constant(feats), nodes[f"{p}.hidden.w"], nodes[f"{p}.hidden.b"], "tanh")
        return dense(hid, nodes[f"{p}.out.w"], nodes[f"{p}.out.b"])


# ---------------------------------------------------------------------------
# strategies


@dataclass(frozen=True)
class Zero:
    name = "zero"

    def init_params(self, rng, cell: CellSpec, **_) -> dict[str, np.ndarray]:
        return {}

    def state_vector(self, tape: Tape, nodes, batch: int, cell: CellSpec, context=None,
                     rng=None, sample: bool = True, eps=None) -> Tensor:
        return tape.constant(np.zeros((batch, cell.state_size)))


@dataclass(frozen=True)
class FreeVariable:
    noise_std: float = 0.0
    key: str = "init.state"
    name = "free"

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    def init_params(self, rng, cell: CellSpec, **_) -> dict[str, np.ndarray]:
        return {self.key: np.zeros(cell.state_size)}

    def state_vector(self, tape, nodes, batch, cell, context=None, rng=None,
                     sample: bool = True, eps=None) -> Tensor:
        tiled = ad.add(tape.constant(np.zeros((batch, cell.state_size))), nodes[self.key])
        if self.noise_std > 0 and sample:
            if eps is None:
                eps = rng.standard_normal((batch, cell.state_size))
            tiled = ad.add(tiled, tape.constant(self.noise_std * np.asarray(eps)))
        return tiled


@dataclass(frozen=True)
class Contextual:
    net: TokenContext | FeatureContext
    name = "learned"

    def init_params(self, rng, cell: CellSpec, embedding_dim: int | None = None) -> dict[str, np.ndarray]:
        if isinstance(self.net, TokenContext):
            return self.net.init_params(rng, embedding_dim, cell.state_size)
        return self.net.init_params(rng, cell.state_size)

    def mean(self, nodes, context, batch: int, cell: CellSpec) -> Tensor:
        mu = self.net(nodes, context)
        if mu.shape != (batch, cell.state_size):
            raise ShapeError(f"context network produced {mu.shape}, expected {(batch, cell.state_size)}")
        return mu

    def state_vector(self, tape, nodes, batch, cell, context=None, rng=None,
                     sample: bool = True, eps=None) -> Tensor:
        return self.mean(nodes, context, batch, cell)


@dataclass(frozen=True)
class ContextualStochastic(Contextual):
    sigma_init: float = -3.0
    sigma_key: str = "init.sigma_raw"
    name = "learned-distribution"

    def init_params(self, rng, cell, embedding_dim=None):
        p = super().init_params(rng, cell, embedding_dim)
        p[self.sigma_key] = np.full(cell.state_size, float(self.sigma_init))
        return p

    def state_vector(self, tape, nodes, batch, cell, context=None, rng=None,
                     sample: bool = True, eps=None) -> Tensor:
        """``mu + softplus(sigma_raw) * eps``; ``sample=False`` returns ``mu``.

        ``eps`` may be passed explicitly to freeze the noise draw.
        """
        mu = self.mean(nodes, context, batch, cell)
        if not sample:
            return mu
        if eps is None:
            eps = rng.standard_normal((batch, cell.state_size))
        scale = ad.softplus(nodes[self.sigma_key])
        return ad.add(mu, ad.mul(tape.constant(eps), scale))


def make_strategy(name: str, context_net=None, noise_std: float = 0.0, sigma_init: float = -3.0):
    if name == "zero":
        return Zero()
    if name == "free":
        return FreeVariable(noise_std=noise_std)
    if name == "learned":
        return Contextual(context_net)
    if name == "learned-distribution":
        return ContextualStochastic(context_net, sigma_init=sigma_init)
    raise ValueError(f"unknown init strategy {name!r}; expected one of {', '.join(STRATEGIES)}")


# thin functional wrappers --------------------------------------------------


def zero_state(tape: Tape, batch: int, cell: CellSpec):
    return cell.from_vector(Zero().state_vector(tape, {}, batch, cell))


def free_state(strategy: FreeVariable, tape, nodes, batch: int, cell: CellSpec, rng):
    return cell.from_vector(strategy.state_vector(tape, nodes, batch, cell, rng=rng))


def contextual_state(strategy: Contextual, tape, nodes, context, cell: CellSpec):
    batch = len(np.asarray(context))
    return cell.from_vector(strategy.state_vector(tape, nodes, batch, cell, context))


def stochastic_contextual_state(strategy: ContextualStochastic, tape, nodes, context, cell, rng, eps=None):
    batch = len(np.asarray(context))
    return cell.from_vector(strategy.state_vector(tape, nodes, batch, cell, context, rng=rng, eps=eps))


__all__ = [
    "STRATEGIES",
    "CellSpec",
    "TokenContext",
    "FeatureContext",
    "Zero",
    "FreeVariable",
    "Contextual",
    "ContextualStochastic",
    "make_strategy",
    "zero_state",
    "free_state",
    "contextual_state",
    "stochastic_contextual_state",
]
