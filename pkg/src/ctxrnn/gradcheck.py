"""Registered finite-difference checks for every primitive, cell and head.

Each check builds a small random instance and returns a
:class:`~ctxrnn.autodiff.GradCheckReport`. Points are drawn away from the
relu kink (``|x| > 1e-3``).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, finite_difference_check
from .cells import (
    DenseMemory,
    FactoredMemory,
    FwParams,
    FwState,
    LstmParams,
    LstmState,
    layer_norm,
    lstm_step,
    lstm_step_composed,
    fw_step,
    softmax_cross_entropy,
)
from .state_init import CellSpec, Contextual, ContextualStochastic, FeatureContext, FreeVariable, TokenContext

CHECKS: dict[str, Callable[[np.random.Generator, float], GradCheckReport]] = {}


def register(name):
    def deco(fn):
        CHECKS[name] = fn
        return fn
    return deco


def _away_from_zero(rng, shape, low=0.1):
    x = rng.uniform(low, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _weights(rng, shape):
    """Fixed random projection so every output element carries gradient."""
    return rng.standard_normal(shape)


def _unary(name, fn, sample=_away_from_zero):
    @register(f"primitive.{name}")
    def check(rng, tol):
        x = sample(rng, (3, 4))
        seed = int(rng.integers(2**31))

        def build(t, p):
            out = fn(p["x"])
            return ad.sum(ad.mul(out, t.constant(_weights(np.random.default_rng(seed), out.shape))))

        return finite_difference_check(build, {"x": x}, tol, name=f"primitive.{name}")
    return check


_unary("tanh", ad.tanh)
_unary("sigmoid", ad.sigmoid)
_unary("relu", ad.relu)
_unary("softplus", ad.softplus)
_unary("exp", ad.exp)
_unary("log", ad.log, sample=lambda rng, shape: rng.uniform(0.5, 2.0, size=shape))
_unary("scale", lambda x: ad.scale(x, -2.5))
_unary("slice", lambda x: ad.slice_last(x, 1, 3))
_unary("reshape", lambda x: ad.slice_last(ad.reshape(x, (4, 3)), 0, 3))
_unary("mean_axis", lambda x: ad.mean(x, axis=-1, keepdims=True))
_unary("sum_axis", lambda x: ad.sum(x, axis=0, keepdims=True))


@register("primitive.mean")
def _mean(rng, tol):
    return finite_difference_check(lambda t, p: ad.mean(ad.mul(p["x"], p["x"])),
                                   {"x": rng.standard_normal((3, 4))}, tol, name="primitive.mean")


@register("primitive.sum")
def _sum(rng, tol):
    return finite_difference_check(lambda t, p: ad.sum(ad.tanh(p["x"])),
                                   {"x": rng.standard_normal((2, 5))}, tol, name="primitive.sum")


def _binary(name, fn, shape_a, shape_b):
    @register(f"primitive.{name}")
    def check(rng, tol):
        a, b = rng.standard_normal(shape_a), rng.standard_normal(shape_b)
        seed = int(rng.integers(2**31))

        def build(t, p):
            out = fn(p["a"], p["b"])
            return ad.sum(ad.mul(out, t.constant(_weights(np.random.default_rng(seed), out.shape))))

        return finite_difference_check(build, {"a": a, "b": b}, tol, name=f"primitive.{name}")
    return check


_binary("matmul", ad.matmul, (3, 4), (4, 2))
_binary("matmul_batched", ad.matmul, (2, 3, 3), (2, 3, 1))
_binary("add_broadcast", ad.add, (3, 4), (4,))
_binary("sub_broadcast", ad.sub, (3, 4), (3, 1))
_binary("mul", ad.mul, (3, 4), (3, 4))
_binary("outer", ad.outer, (3, 4), (3, 2))
_binary("concat", lambda a, b: ad.concat([a, b]), (3, 2), (3, 4))


@register("primitive.embedding")
def _embedding(rng, tol):
    ids = np.array([3, 1, 3, 0])
    w = _weights(rng, (4, 5))
    return finite_difference_check(lambda t, p: ad.sum(ad.mul(ad.embedding(p["table"], ids), t.constant(w))),
                                   {"table": rng.standard_normal((6, 5))}, tol, name="primitive.embedding")


@register("primitive.fan_out")
def _fan_out(rng, tol):
    # f(x) = g(x) + h(x): the node x feeds two branches
    return finite_difference_check(lambda t, p: ad.sum(ad.add(ad.tanh(p["x"]), ad.exp(p["x"]))),
                                   {"x": rng.standard_normal(5)}, tol, name="primitive.fan_out")


@register("nn.layer_norm")
def _layer_norm(rng, tol):
    w = _weights(rng, (3, 5))
    params = {"v": rng.standard_normal((3, 5)), "gain": rng.uniform(0.5, 1.5, 5),
              "bias": rng.standard_normal(5)}
    return finite_difference_check(
        lambda t, p: ad.sum(ad.mul(layer_norm(p["v"], p["gain"], p["bias"]), t.constant(w))),
        params, tol, name="nn.layer_norm")


@register("nn.softmax_cross_entropy")
def _xent(rng, tol):
    targets = np.array([0, 3, 2, 3])
    return finite_difference_check(lambda t, p: softmax_cross_entropy(p["logits"], targets),
                                   {"logits": rng.standard_normal((4, 5))}, tol,
                                   name="nn.softmax_cross_entropy")


def _lstm_params(rng, E, H, B):
    return {
        "x": rng.standard_normal((B, E)),
        "h": rng.standard_normal((B, H)) * 0.5,
        "c": rng.standard_normal((B, H)) * 0.5,
        "w_x": rng.standard_normal((E, 4 * H)) * 0.5,
        "w_h": rng.standard_normal((H, 4 * H)) * 0.5,
        "b": rng.standard_normal(4 * H) * 0.1,
    }


def _lstm_check(step, name):
    @register(name)
    def check(rng, tol):
        E, H, B = 3, 4, 2
        w = _weights(rng, (B, 2 * H))

        def build(t, p):
            s = step(p["x"], LstmState(p["h"], p["c"]), LstmParams(p["w_x"], p["w_h"], p["b"]))
            return ad.sum(ad.mul(ad.concat([s.h, s.c]), t.constant(w)))

        return finite_difference_check(build, _lstm_params(rng, E, H, B), tol, name=name)
    return check


_lstm_check(lstm_step, "cell.lstm_step")
_lstm_check(lstm_step_composed, "cell.lstm_step_composed")


def _fw_check(memory, name, steps=2):
    @register(name)
    def check(rng, tol):
        E, H, B = 2, 3, 2
        params = {
            "x1": rng.standard_normal((B, E)),
            "x2": rng.standard_normal((B, E)),
            "h": np.abs(rng.standard_normal((B, H))) + 0.1,
            "W": rng.standard_normal((H, H)) * 0.5,
            "C": rng.standard_normal((E, H)) * 0.5,
            "gain": rng.uniform(0.5, 1.5, H),
            "bias": rng.standard_normal(H) * 0.1,
        }
        w = _weights(rng, (B, H))

        def build(t, p):
            fw = FwParams(p["W"], p["C"], p["gain"], p["bias"], decay=0.9, lr=0.5, steps=steps)
            A = DenseMemory.zeros(t, B, H) if memory == "dense" else FactoredMemory()
            s = fw_step(p["x1"], FwState(p["h"], A), fw)
            s = fw_step(p["x2"], s, fw)
            return ad.sum(ad.mul(s.h, t.constant(w)))

        return finite_difference_check(build, params, tol, name=name)
    return check


_fw_check("dense", "cell.fw_step_dense")
_fw_check("factored", "cell.fw_step_factored")


@register("context.token")
def _token_context(rng, tol):
    net = TokenContext(embedding_key="table", prefix="ctx")
    ids = np.array([1, 4, 1])
    cell = CellSpec("fw", 3)
    params = {"table": rng.standard_normal((5, 4)), **net.init_params(rng, 4, cell.state_size)}
    params["ctx.out.b"] = rng.standard_normal(cell.state_size) * 0.1
    w = _weights(rng, (3, cell.state_size))
    strategy = Contextual(net)
    return finite_difference_check(
        lambda t, p: ad.sum(ad.mul(strategy.state_vector(t, p, 3, cell, ids), t.constant(w))),
        params, tol, name="context.token")


@register("context.feature")
def _feature_context(rng, tol):
    net = FeatureContext(2, 5, prefix="ctx")
    cell = CellSpec("lstm", 2)
    ctx = rng.uniform(0, 1, size=(3, 2))
    params = net.init_params(rng, cell.state_size)
    params["ctx.hidden.b"] = rng.standard_normal(5) * 0.1
    w = _weights(rng, (3, cell.state_size))
    strategy = Contextual(net)
    return finite_difference_check(
        lambda t, p: ad.sum(ad.mul(strategy.state_vector(t, p, 3, cell, ctx), t.constant(w))),
        params, tol, name="context.feature")


@register("context.stochastic_head")
def _stochastic(rng, tol):
    net = FeatureContext(2, 5, prefix="ctx")
    cell = CellSpec("lstm", 2)
    strategy = ContextualStochastic(net)
    ctx = rng.uniform(0, 1, size=(3, 2))
    eps = rng.standard_normal((3, cell.state_size))
    params = strategy.init_params(rng, cell)
    params["init.sigma_raw"] = rng.standard_normal(cell.state_size)
    w = _weights(rng, (3, cell.state_size))
    return finite_difference_check(
        lambda t, p: ad.sum(ad.mul(strategy.state_vector(t, p, 3, cell, ctx, eps=eps), t.constant(w))),
        params, tol, name="context.stochastic_head")


@register("context.free_variable")
def _free(rng, tol):
    cell = CellSpec("lstm", 2)
    strategy = FreeVariable(noise_std=0.3)
    eps = rng.standard_normal((4, cell.state_size))
    w = _weights(rng, (4, cell.state_size))
    return finite_difference_check(
        lambda t, p: ad.sum(ad.mul(strategy.state_vector(t, p, 4, cell, eps=eps), t.constant(w))),
        {"init.state": rng.standard_normal(cell.state_size)}, tol, name="context.free_variable")


def run_all(tolerance: float = 1e-4, seed: int = 0) -> list[GradCheckReport]:
    reports = []
    for i, (name, check) in enumerate(sorted(CHECKS.items())):
        reports.append(check(np.random.default_rng([seed, i]), tolerance))
    return reports
