"""scikit-learn style estimators wrapping the ART and LCD networks.

Both estimators follow the usual contract: hyperparameters are set in
``__init__`` and exposed through ``get_params``/``set_params``; learned state
lives in trailing-underscore attributes after ``fit``.
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff import Tape, backward
from .cells import log_softmax
from .data import N_DIGITS, VOCAB_SIZE, Scaler, validate_art
from .models import ArtNetwork, LcdNetwork, bind
from .optim import Adam


class NonFiniteLoss(FloatingPointError):
    pass


def _streams(seed):
    init, shuffle, noise = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(shuffle),
            np.random.default_rng(noise))


def _check_tokens(X, y=None):
    X = check_array(X, dtype=np.int64)
    if X.min() < 0 or X.max() >= VOCAB_SIZE:
        raise ValueError(f"token ids must lie in [0, {VOCAB_SIZE})")
    if y is None:
        return X
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= N_DIGITS):
        raise ValueError("targets must be digits 0-9")
    return X, y


class _RecurrentEstimator(BaseEstimator):
    """Shared minibatch loop. Subclasses provide ``_build_network``,
    ``_batch_loss`` and ``_evaluate_arrays``."""

    def _initialize(self):
        self.network_ = self._build_network()
        init_rng, self._shuffle_rng, self._noise_rng = _streams(self.random_state)
        self.params_ = self.network_.init_params(init_rng)
        self.optimizer_ = Adam(lr=self.learning_rate, clip_norm=self.clip_norm)
        self.history_ = []
        self.n_epochs_ = 0

    def _record(self, split, epoch, metrics, seconds, on_record):
        rec = {"epoch": epoch, "split": split, **metrics, "seconds": seconds,
               "seed": self.random_state}
        self.history_.append(rec)
        if on_record is not None:
            on_record(rec)

    def _fit_loop(self, arrays, validation, on_record):
        self._initialize()
        start = time.perf_counter()
        if validation is not None:
            self._record("valid", 0, self._evaluate_arrays(*validation),
                         time.perf_counter() - start, on_record)
        n = arrays[0].shape[0]
        for epoch in range(1, self.epochs + 1):
            order = self._shuffle_rng.permutation(n)
            total, count = {}, 0
            for lo in range(0, n, self.batch_size):
                idx = order[lo:lo + self.batch_size]
                batch_metrics = self._train_batch(*(a[idx] for a in arrays))
                for k, v in batch_metrics.items():
                    total[k] = total.get(k, 0.0) + v * len(idx)
                count += len(idx)
            self.n_epochs_ = epoch
            now = time.perf_counter() - start
            self._record("train", epoch, {k: v / count for k, v in total.items()}, now, on_record)
            if validation is not None:
                self._record("valid", epoch, self._evaluate_arrays(*validation),
                             time.perf_counter() - start, on_record)
        return self

    def _train_batch(self, *batch):
        tape = Tape()
        nodes = bind(tape, self.params_)
        loss, out = self._batch_loss(tape, nodes, *batch)
        value = float(loss.value)
        if not np.isfinite(value):
            raise NonFiniteLoss(f"non-finite training loss at epoch {self.n_epochs_ + 1}")
        grads = backward(tape, loss)
        self.optimizer_.step(self.params_, {k: grads[node] for k, node in nodes.items()})
        return self._batch_metrics(value, out, *batch)


class ArtClassifier(ClassifierMixin, _RecurrentEstimator):
    """Fast-weights RNN classifier for associative retrieval sequences.

    ``X`` holds token-id sequences of shape ``(n, 2K+3)``; ``y`` the target
    digits. ``init`` selects the initial-state strategy: ``"zero"``,
    ``"free"``, ``"learned"`` (conditioned on the first token) or
    ``"learned-distribution"``.
    """

    def __init__(self, init="learned", hidden_size=50, embedding_dim=64, fw_decay=0.95,
                 fw_learning_rate=0.5, fw_steps=1, noise_std=0.0, learning_rate=1e-3,
                 batch_size=128, epochs=200, clip_norm=None, eval_batch_size=1000,
                 random_state=0):
        self.init = init
        self.hidden_size = hidden_size
        self.embedding_dim = embedding_dim
        self.fw_decay = fw_decay
        self.fw_learning_rate = fw_learning_rate
        self.fw_steps = fw_steps
        self.noise_std = noise_std
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.eval_batch_size = eval_batch_size
        self.random_state = random_state

    def _build_network(self):
        return ArtNetwork(self.init, self.hidden_size, self.embedding_dim, self.fw_decay,
                          self.fw_learning_rate, self.fw_steps, self.noise_std)

    def fit(self, X, y, validation_data=None, on_record=None):
        """Train for ``epochs`` passes. ``epochs=0`` only initialises weights.

        With ``validation_data=(X_val, y_val)`` a validation record is kept
        before training (epoch 0) and after every epoch in ``history_``.
        """
        X, y = _check_tokens(X, y)
        validate_art(X, y)
        self.classes_ = np.arange(N_DIGITS)
        if validation_data is not None:
            validation_data = _check_tokens(*validation_data)
        return self._fit_loop((X, y), validation_data, on_record)

    def _batch_loss(self, tape, nodes, tokens, targets):
        return self.network_.loss(tape, nodes, tokens, targets, rng=self._noise_rng, sample=True)

    def _batch_metrics(self, loss, logits, tokens, targets):
        acc = float(np.mean(np.argmax(logits.value, axis=1) == targets))
        return {"log_likelihood": -loss, "accuracy": acc}

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = _check_tokens(X)
        out = []
        for lo in range(0, X.shape[0], self.eval_batch_size):
            tape = Tape()
            nodes = bind(tape, self.params_, trainable=False)
            out.append(self.network_.logits(tape, nodes, X[lo:lo + self.eval_batch_size], sample=False).value)
        return np.concatenate(out)

    def predict_log_proba(self, X):
        return log_softmax(self.decision_function(X))

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def _evaluate_arrays(self, X, y):
        logp = self.predict_log_proba(X)
        return {
            "log_likelihood": float(logp[np.arange(len(y)), y].mean()),
            "accuracy": float(np.mean(np.argmax(logp, axis=1) == y)),
        }

    def evaluate(self, X, y) -> dict[str, float]:
        """Mean log likelihood of the targets and accuracy, without sampling."""
        X, y = _check_tokens(X, y)
        return self._evaluate_arrays(X, y)

    def log_likelihood(self, X, y) -> float:
        return self.evaluate(X, y)["log_likelihood"]


class LcdSequenceModel(RegressorMixin, _RecurrentEstimator):
    """LSTM that models linear-cosine-decay sequences through per-step deltas.

    ``X`` holds unscaled sequences ``(n, t_f)``; ``y`` holds the period of
    each sequence, which conditions the model (through the initial state
    for contextual strategies, as an extra per-step input otherwise).
    ``score`` is the negated validation MSE on scaled deltas.
    """

    def __init__(self, init="learned-distribution", hidden_size=128, context_hidden=50,
                 append_period=None, sigma_init=-3.0, noise_std=0.0, learning_rate=2e-4,
                 batch_size=128, epochs=65, clip_norm=None, eval_batch_size=1000,
                 random_state=0, x_divisor=4.004, period_divisor=4.5):
        self.init = init
        self.hidden_size = hidden_size
        self.context_hidden = context_hidden
        self.append_period = append_period
        self.sigma_init = sigma_init
        self.noise_std = noise_std
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.eval_batch_size = eval_batch_size
        self.random_state = random_state
        self.x_divisor = x_divisor
        self.period_divisor = period_divisor

    @property
    def scaler(self) -> Scaler:
        return Scaler(self.x_divisor, self.period_divisor)

    def _build_network(self):
        return LcdNetwork(self.init, self.hidden_size, self.context_hidden, self.append_period,
                          self.sigma_init, self.noise_std)

    def _prepare(self, X, periods):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] < 2:
            raise ValueError("sequences need at least two time steps")
        periods = np.asarray(periods, dtype=np.float64).reshape(-1)
        if periods.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but {periods.shape[0]} periods were given")
        sc = self.scaler
        return sc.scale(X), sc.scale_period(periods)

    def fit(self, X, y, validation_data=None, on_record=None):
        arrays = self._prepare(X, y)
        if validation_data is not None:
            validation_data = self._prepare(*validation_data)
        return self._fit_loop(arrays, validation_data, on_record)

    def _batch_loss(self, tape, nodes, values, period):
        return self.network_.loss(tape, nodes, values, period, rng=self._noise_rng, sample=True)

    def _batch_metrics(self, loss, preds, values, period):
        return {"mse": loss}

    def _deltas(self, values, period):
        out = []
        for lo in range(0, values.shape[0], self.eval_batch_size):
            sl = slice(lo, lo + self.eval_batch_size)
            tape = Tape()
            nodes = bind(tape, self.params_, trainable=False)
            out.append(self.network_.teacher_forced(tape, nodes, values[sl], period[sl], sample=False).value)
        return np.concatenate(out)

    def _evaluate_arrays(self, values, period):
        err = self._deltas(values, period) - np.diff(values, axis=1)
        return {"mse": float(np.mean(err * err))}

    def evaluate(self, X, y) -> dict[str, float]:
        check_is_fitted(self, "params_")
        return self._evaluate_arrays(*self._prepare(X, y))

    def predict(self, X, y):
        """Teacher-forced one-step-ahead predictions of ``x_1..x_{t_f-1}`` (unscaled)."""
        check_is_fitted(self, "params_")
        values, period = self._prepare(X, y)
        return self.scaler.unscale(values[:, :-1] + self._deltas(values, period))

    def score(self, X, y, sample_weight=None):
        return -self.evaluate(X, y)["mse"]

    def sample(self, x0: float, period: float, n_samples: int = 10, length: int = 25,
               random_state=None, sample: bool = True, eps=None) -> np.ndarray:
        """Free-running trajectories ``(n_samples, length)``, unscaled, each starting at ``x0``.

        Each trajectory gets its own initial-state draw; ``eps`` freezes the draws.
        """
        check_is_fitted(self, "params_")
        rng = np.random.default_rng(random_state)
        sc = self.scaler
        x0s = np.full(n_samples, float(sc.scale(x0)))
        periods = np.full(n_samples, float(sc.scale_period(period)))
        tape = Tape()
        nodes = bind(tape, self.params_, trainable=False)
        traj = self.network_.free_run(tape, nodes, x0s, periods, length, rng=rng,
                                      sample=sample, eps=eps)
        traj = sc.unscale(traj)
        traj[:, 0] = x0
        return traj
