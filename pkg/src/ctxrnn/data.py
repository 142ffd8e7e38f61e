"""Seeded dataset generators for associative retrieval (ART) and linear cosine
decay (LCD), plus their line-oriented text formats.

ART token ids: ``'a'..'z' -> 0..25``, ``'0'..'9' -> 26..35``, ``'?' -> 36``.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LETTERS = string.ascii_lowercase
DIGITS = string.digits
QUERY_MARK = "?"
VOCAB = LETTERS + DIGITS + QUERY_MARK
VOCAB_SIZE = len(VOCAB)
CHAR_TO_ID = {ch: i for i, ch in enumerate(VOCAB)}
DIGIT_OFFSET = len(LETTERS)
QUERY_ID = CHAR_TO_ID[QUERY_MARK]
N_DIGITS = 10

T_TRAIN = (0.5, 1.5, 2.5, 3.5, 4.5)
T_VALID = (1.0, 2.0, 3.0, 4.0)

# substream labels for seed splitting
_TRAIN, _VALID = 0, 1


class DatasetFormatError(ValueError):
    pass


def encode(text: str) -> np.ndarray:
    try:
        return np.array([CHAR_TO_ID[ch] for ch in text], dtype=np.int64)
    except KeyError as err:
        raise ValueError(f"character {err.args[0]!r} is not in the ART vocabulary") from None


def decode(ids) -> str:
    return "".join(VOCAB[int(i)] for i in ids)


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# ---------------------------------------------------------------------------
# associative retrieval


@dataclass(frozen=True)
class ArtSample:
    tokens: np.ndarray  # length 2K + 3
    target: int  # digit 0..9

    def __str__(self):
        return f"{decode(self.tokens)} -> {self.target}"


def art_from_pairs(pairs: list[tuple[str, int]], query: str) -> ArtSample:
    """Lay out ``c1 d1 ... cK dK ? ? query``; the target is the query's digit."""
    chars = [c for c, _ in pairs]
    if len(set(chars)) != len(chars):
        raise ValueError("pair characters must be distinct")
    lookup = dict(pairs)
    if query not in lookup:
        raise ValueError(f"query {query!r} is not one of the pair characters")
    text = "".join(f"{c}{d}" for c, d in pairs) + QUERY_MARK * 2 + query
    return ArtSample(encode(text), int(lookup[query]))


def _check_k(K: int) -> None:
    if not 1 <= K <= len(LETTERS):
        raise ValueError(f"K must lie in [1, {len(LETTERS)}], got {K}")


def gen_art_sample(rng: np.random.Generator, K: int = 4) -> ArtSample:
    _check_k(K)
    chars = rng.choice(len(LETTERS), size=K, replace=False)
    digits = rng.integers(0, N_DIGITS, size=K)
    q = int(rng.integers(0, K))
    tokens = np.empty(2 * K + 3, dtype=np.int64)
    tokens[0:2 * K:2] = chars
    tokens[1:2 * K:2] = digits + DIGIT_OFFSET
    tokens[2 * K:2 * K + 2] = QUERY_ID
    tokens[-1] = chars[q]
    return ArtSample(tokens, int(digits[q]))


def gen_art_batch(rng: np.random.Generator, n: int, K: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised draw of ``n`` samples as ``(tokens (n, 2K+3), targets (n,))``."""
    _check_k(K)
    chars = np.argsort(rng.random((n, len(LETTERS))), axis=1)[:, :K]
    digits = rng.integers(0, N_DIGITS, size=(n, K))
    q = rng.integers(0, K, size=n)
    tokens = np.empty((n, 2 * K + 3), dtype=np.int64)
    tokens[:, 0:2 * K:2] = chars
    tokens[:, 1:2 * K:2] = digits + DIGIT_OFFSET
    tokens[:, 2 * K:2 * K + 2] = QUERY_ID
    rows = np.arange(n)
    tokens[:, -1] = chars[rows, q]
    return tokens, digits[rows, q]


def gen_art_dataset(n_train: int, n_valid: int, K: int = 4, seed: int = 0):
    """Train and validation sets drawn from disjoint substreams of ``seed``."""
    if n_train < 1 or n_valid < 1:
        raise ValueError("dataset sizes must be >= 1")
    train = gen_art_batch(_substream(seed, _TRAIN), n_train, K)
    valid = gen_art_batch(_substream(seed, _VALID), n_valid, K)
    return train, valid


def validate_art(tokens: np.ndarray, targets: np.ndarray) -> None:
    """Raise :class:`DatasetFormatError` unless every row is a well-formed sample."""
    tokens = np.asarray(tokens)
    targets = np.asarray(targets)
    if tokens.ndim != 2 or targets.shape != (tokens.shape[0],):
        raise DatasetFormatError(f"bad ART array shapes {tokens.shape} / {targets.shape}")
    L = tokens.shape[1]
    if L < 5 or (L - 3) % 2:
        raise DatasetFormatError(f"ART sequences must have length 2K+3, got {L}")
    K = (L - 3) // 2
    chars = tokens[:, 0:2 * K:2]
    digits = tokens[:, 1:2 * K:2] - DIGIT_OFFSET
    if chars.min() < 0 or chars.max() >= DIGIT_OFFSET:
        raise DatasetFormatError("pair character outside a-z")
    if digits.min() < 0 or digits.max() >= N_DIGITS:
        raise DatasetFormatError("pair digit outside 0-9")
    if np.any(tokens[:, 2 * K:2 * K + 2] != QUERY_ID):
        raise DatasetFormatError("positions 2K and 2K+1 must be '?'")
    srt = np.sort(chars, axis=1)
    if np.any(srt[:, 1:] == srt[:, :-1]):
        raise DatasetFormatError("pair characters are not distinct")
    hit = chars == tokens[:, -1:]
    if np.any(hit.sum(axis=1) != 1):
        raise DatasetFormatError("query is not one of the pair characters")
    if np.any(digits[hit] != targets):
        raise DatasetFormatError("target does not match the query's digit")


def save_art(path, tokens: np.ndarray, targets: np.ndarray) -> None:
    """One sample per line: space-separated token ids, a tab, the target digit."""
    lines = [" ".join(map(str, row)) + f"\t{int(t)}\n" for row, t in zip(tokens.tolist(), targets.tolist())]
    Path(path).write_text("# art v1 vocab=" + VOCAB + "\n" + "".join(lines))


def load_art(path) -> tuple[np.ndarray, np.ndarray]:
    rows, targets = [], []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != "# art v1 vocab=" + VOCAB:
            raise DatasetFormatError(f"{path}: not an ART dataset (header {header!r})")
        for lineno, line in enumerate(fh, start=2):
            try:
                toks, tgt = line.rstrip("\n").split("\t")
                rows.append([int(t) for t in toks.split()])
                targets.append(int(tgt))
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: malformed line") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise DatasetFormatError(f"{path}: empty dataset or ragged sequences")
    tokens, targets = np.array(rows, dtype=np.int64), np.array(targets, dtype=np.int64)
    validate_art(tokens, targets)
    return tokens, targets


# ---------------------------------------------------------------------------
# linear cosine decay


@dataclass(frozen=True)
class LcdConfig:
    x0: float
    period: float
    t_f: int = 25
    alpha: float = 0.0
    beta: float = 0.001

    def __post_init__(self):
        if self.t_f < 2:
            raise ValueError("t_f must be >= 2")
        if self.period <= 0:
            raise ValueError("period must be positive")


def lcd_value(t, cfg: LcdConfig):
    """Linear-envelope cosine decay evaluated at time ``t`` (scalar or array)."""
    linear = cfg.alpha + (cfg.t_f - t) / cfg.t_f
    cosine = (1.0 + np.cos(2.0 * cfg.period * math.pi * t / cfg.t_f)) / 2.0
    return cfg.x0 * (linear * cosine + cfg.beta)


@dataclass(frozen=True)
class LcdSequence:
    config: LcdConfig
    values: np.ndarray  # unscaled, length t_f, sampled at t = 0..t_f-1


def make_lcd_sequence(cfg: LcdConfig) -> LcdSequence:
    return LcdSequence(cfg, lcd_value(np.arange(cfg.t_f, dtype=np.float64), cfg))


def gen_lcd_dataset(periods, n_per_period: int, t_f: int = 25, seed: int = 0,
                    x0_range: tuple[float, float] = (2.0, 4.0),
                    alpha: float = 0.0, beta: float = 0.001) -> list[LcdSequence]:
    periods = list(periods)
    if not periods:
        raise ValueError("periods must be non-empty")
    if n_per_period < 1:
        raise ValueError("n_per_period must be >= 1")
    out = []
    for k, period in enumerate(periods):
        rng = _substream(seed, k)
        for x0 in rng.uniform(*x0_range, size=n_per_period):
            out.append(make_lcd_sequence(LcdConfig(float(x0), float(period), t_f, alpha, beta)))
    return out


def gen_lcd_splits(n_train: int = 1000, n_valid: int = 500, t_f: int = 25, seed: int = 0,
                   train_periods=T_TRAIN, valid_periods=T_VALID):
    train = gen_lcd_dataset(train_periods, n_train, t_f, int(_substream(seed, _TRAIN).integers(2**63)))
    valid = gen_lcd_dataset(valid_periods, n_valid, t_f, int(_substream(seed, _VALID).integers(2**63)))
    return train, valid


def lcd_arrays(seqs: list[LcdSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack into ``(values (n, t_f), periods (n,))``."""
    values = np.stack([s.values for s in seqs])
    periods = np.array([s.config.period for s in seqs])
    return values, periods


def save_lcd(path, seqs: list[LcdSequence]) -> None:
    """One sequence per line: ``period x0 v_0 ... v_{t_f-1}`` (round-trip float repr)."""
    if not seqs:
        raise ValueError("nothing to save")
    c = seqs[0].config
    lines = [f"# lcd v1 t_f={c.t_f} alpha={c.alpha!r} beta={c.beta!r}\n"]
    for s in seqs:
        nums = [s.config.period, s.config.x0, *s.values.tolist()]
        lines.append(" ".join(repr(float(v)) for v in nums) + "\n")
    Path(path).write_text("".join(lines))


def load_lcd(path) -> list[LcdSequence]:
    with open(path) as fh:
        header = fh.readline().split()
        if header[:3] != ["#", "lcd", "v1"]:
            raise DatasetFormatError(f"{path}: not an LCD dataset")
        try:
            meta = dict(kv.split("=") for kv in header[3:])
            t_f, alpha, beta = int(meta["t_f"]), float(meta["alpha"]), float(meta["beta"])
        except (KeyError, ValueError):
            raise DatasetFormatError(f"{path}: malformed header") from None
        out = []
        for lineno, line in enumerate(fh, start=2):
            try:
                nums = [float(v) for v in line.split()]
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: malformed number") from None
            if len(nums) != t_f + 2:
                raise DatasetFormatError(f"{path}:{lineno}: expected {t_f + 2} fields, got {len(nums)}")
            vals = np.array(nums[2:])
            if not np.all(np.isfinite(vals)):
                raise DatasetFormatError(f"{path}:{lineno}: non-finite value")
            out.append(LcdSequence(LcdConfig(nums[1], nums[0], t_f, alpha, beta), vals))
    if not out:
        raise DatasetFormatError(f"{path}: empty dataset")
    return out


# ---------------------------------------------------------------------------
# scaling and delta targets


@dataclass(frozen=True)
class Scaler:
    """Fixed analytic scaling into [0, 1]: values by ``x_max * (1 + beta)``,
    periods by the largest training period."""

    x_divisor: float = 4.0 * (1 + 0.001)
    period_divisor: float = 4.5

    def scale(self, x):
        return np.asarray(x, dtype=np.float64) / self.x_divisor

    def unscale(self, x):
        return np.asarray(x, dtype=np.float64) * self.x_divisor

    def scale_period(self, T):
        return np.asarray(T, dtype=np.float64) / self.period_divisor

    def unscale_period(self, T):
        return np.asarray(T, dtype=np.float64) * self.period_divisor


def delta_targets(values) -> np.ndarray:
    """``values[..., t] - values[..., t-1]`` along the last axis."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] < 2:
        raise ValueError("need at least two time steps")
    return np.diff(values, axis=-1)


def reconstruct(first, deltas) -> np.ndarray:
    """Inverse of :func:`delta_targets`: accumulate deltas onto the first value."""
    first = np.asarray(first, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    out = np.empty(deltas.shape[:-1] + (deltas.shape[-1] + 1,))
    out[..., 0] = first
    prev = first
    for t in range(deltas.shape[-1]):
        prev = deltas[..., t] + prev
        out[..., t + 1] = prev
    return out
