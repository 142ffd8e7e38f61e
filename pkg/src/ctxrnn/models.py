"""Network graphs for the two tasks.

Parameters live in flat ``{name: ndarray}`` dicts. A forward pass receives
the same names bound to tape nodes (trainable params or constants).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .cells import (
    FwParams,
    LstmParams,
    dense,
    embed,
    fw_step,
    glorot_uniform,
    init_dense,
    init_fw,
    init_lstm,
    lstm_step,
    softmax_cross_entropy,
)
from .data import N_DIGITS, VOCAB_SIZE
from .state_init import CellSpec, Contextual, FeatureContext, TokenContext, make_strategy


def bind(tape: Tape, params: dict[str, np.ndarray], trainable: bool = True) -> dict[str, Tensor]:
    make = tape.param if trainable else tape.constant
    return {k: make(v, name=k) for k, v in params.items()}


@dataclass
class ArtNetwork:
    """Embedding -> fast-weights RNN over the whole sequence -> softmax over digits."""

    init: str = "learned"
    hidden: int = 50
    embedding_dim: int = 64
    decay: float = 0.95
    fw_lr: float = 0.5
    inner_steps: int = 1
    noise_std: float = 0.0
    memory: str = "factored"
    readout_scale: float = 0.1

    def __post_init__(self):
        self.cell = CellSpec("fw", self.hidden, self.memory)
        self.strategy = make_strategy(self.init, TokenContext(), noise_std=self.noise_std)

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        p = {"embed.table": glorot_uniform(rng, VOCAB_SIZE, self.embedding_dim)}
        p.update(init_fw(rng, self.embedding_dim, self.hidden))
        p.update(init_dense(rng, self.hidden, N_DIGITS, "out"))
        # small readout so an untrained model predicts near-uniform digits
        p["out.w"] *= self.readout_scale
        p.update(self.strategy.init_params(rng, self.cell, embedding_dim=self.embedding_dim))
        return p

    def logits(self, tape: Tape, nodes, tokens: np.ndarray, rng=None, sample: bool = True) -> Tensor:
        B, L = tokens.shape
        vec = self.strategy.state_vector(tape, nodes, B, self.cell, context=tokens[:, 0],
                                         rng=rng, sample=sample)
        state = self.cell.from_vector(vec)
        fw = FwParams(nodes["fw.W"], nodes["fw.C"], nodes["fw.gain"], nodes["fw.bias"],
                      self.decay, self.fw_lr, self.inner_steps)
        table = nodes["embed.table"]
        for t in range(L):
            state = fw_step(embed(tokens[:, t], table), state, fw)
        return dense(state.h, nodes["out.w"], nodes["out.b"])

    def loss(self, tape, nodes, tokens, targets, rng=None, sample=True) -> tuple[Tensor, Tensor]:
        logits = self.logits(tape, nodes, tokens, rng, sample)
        return softmax_cross_entropy(logits, targets), logits


@dataclass
class LcdNetwork:
    """LSTM predicting the per-step change of a scaled sequence.

    Inputs at step ``t`` are the scaled previous value, plus the scaled period
    when the period is not delivered through the initial state.
    """

    init: str = "learned-distribution"
    hidden: int = 128
    context_hidden: int = 50
    append_period: bool | None = None
    sigma_init: float = -3.0
    noise_std: float = 0.0

    def __post_init__(self):
        self.cell = CellSpec("lstm", self.hidden)
        self.strategy = make_strategy(self.init, FeatureContext(2, self.context_hidden),
                                      noise_std=self.noise_std, sigma_init=self.sigma_init)
        if self.append_period is None:
            self.append_period = not isinstance(self.strategy, Contextual)

    @property
    def input_dim(self) -> int:
        return 2 if self.append_period else 1

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        p = init_lstm(rng, self.input_dim, self.hidden)
        p.update(init_dense(rng, self.hidden, 1, "out"))
        p.update(self.strategy.init_params(rng, self.cell))
        return p

    def _lstm(self, nodes) -> LstmParams:
        return LstmParams(nodes["lstm.w_x"], nodes["lstm.w_h"], nodes["lstm.b"])

    def initial_state(self, tape, nodes, x0: np.ndarray, period: np.ndarray, rng=None,
                      sample: bool = True, eps=None):
        context = np.stack([x0, period], axis=1)
        vec = self.strategy.state_vector(tape, nodes, len(x0), self.cell, context=context,
                                         rng=rng, sample=sample, eps=eps)
        return self.cell.from_vector(vec)

    def _input(self, tape, x_prev: np.ndarray | Tensor, period: np.ndarray) -> Tensor:
        if isinstance(x_prev, np.ndarray):
            x_prev = tape.constant(x_prev[:, None])
        if self.append_period:
            return ad.concat([x_prev, tape.constant(period[:, None])])
        return x_prev

    def teacher_forced(self, tape, nodes, values: np.ndarray, period: np.ndarray,
                       rng=None, sample: bool = True) -> Tensor:
        """Predicted deltas ``(batch, t_f - 1)`` from scaled ``values`` and ``period``."""
        state = self.initial_state(tape, nodes, values[:, 0], period, rng, sample)
        lstm = self._lstm(nodes)
        preds = []
        for t in range(values.shape[1] - 1):
            state = lstm_step(self._input(tape, values[:, t], period), state, lstm)
            preds.append(dense(state.h, nodes["out.w"], nodes["out.b"]))
        return ad.concat(preds)

    def loss(self, tape, nodes, values, period, rng=None, sample=True) -> tuple[Tensor, Tensor]:
        preds = self.teacher_forced(tape, nodes, values, period, rng, sample)
        diff = ad.sub(preds, tape.constant(np.diff(values, axis=1)))
        return ad.mean(ad.mul(diff, diff)), preds

    def free_run(self, tape, nodes, x0: np.ndarray, period: np.ndarray, length: int,
                 rng=None, sample: bool = True, eps=None) -> np.ndarray:
        """Roll out ``length`` scaled values starting at ``x0``, feeding each
        prediction back as the next input."""
        state = self.initial_state(tape, nodes, x0, period, rng, sample, eps)
        lstm = self._lstm(nodes)
        out = np.empty((len(x0), length))
        out[:, 0] = x0
        x_prev = np.asarray(x0, dtype=np.float64)
        for t in range(1, length):
            state = lstm_step(self._input(tape, x_prev, period), state, lstm)
            delta = dense(state.h, nodes["out.w"], nodes["out.b"]).value[:, 0]
            x_prev = delta + x_prev
            out[:, t] = x_prev
        return out
