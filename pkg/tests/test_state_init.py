import numpy as np
import pytest

from ctxrnn import autodiff as ad
from ctxrnn.autodiff import ShapeError, Tape, backward, finite_difference_check
from ctxrnn.cells import DenseMemory, FactoredMemory, LstmState
from ctxrnn.state_init import (
    CellSpec,
    Contextual,
    ContextualStochastic,
    FeatureContext,
    FreeVariable,
    TokenContext,
    Zero,
    contextual_state,
    free_state,
    make_strategy,
    stochastic_contextual_state,
    zero_state,
)

LSTM2 = CellSpec("lstm", 2)


def _bind(t, params):
    return {k: t.param(v) for k, v in params.items()}


def test_zero_state_lstm_shapes():
    s = zero_state(Tape(), 3, LSTM2)
    assert isinstance(s, LstmState)
    np.testing.assert_array_equal(s.h.value, np.zeros((3, 2)))
    np.testing.assert_array_equal(s.c.value, np.zeros((3, 2)))


@pytest.mark.parametrize("batch", [1, 5, 17])
def test_zero_state_has_no_mass(batch):
    s = zero_state(Tape(), batch, CellSpec("lstm", 4))
    assert np.abs(s.h.value).sum() + np.abs(s.c.value).sum() == 0


@pytest.mark.parametrize("memory", ["dense", "factored"])
def test_zero_state_fw_memory_is_zero(memory):
    t = Tape()
    s = zero_state(t, 2, CellSpec("fw", 3, memory))
    if isinstance(s.A, DenseMemory):
        np.testing.assert_array_equal(s.A.dense().value, np.zeros((2, 3, 3)))
    else:
        assert isinstance(s.A, FactoredMemory) and s.A.keys == ()
        np.testing.assert_array_equal(s.A.matvec(t.constant(np.ones((2, 3)))).value, np.zeros((2, 3)))


def test_free_state_is_pure_tiling_without_noise():
    t = Tape()
    strat = FreeVariable()
    v = np.array([0.5, -1.0, 2.0, 0.25])
    s = free_state(strat, t, {"init.state": t.param(v)}, 4, LSTM2, rng=None)
    np.testing.assert_array_equal(np.concatenate([s.h.value, s.c.value], axis=1), np.tile(v, (4, 1)))


def test_free_state_gradient_is_batch_size():
    t = Tape()
    node = t.param(np.array([0.1, 0.2, 0.3, 0.4]))
    vec = FreeVariable().state_vector(t, {"init.state": node}, 6, LSTM2)
    g = backward(t, ad.sum(vec))
    np.testing.assert_array_equal(g[node], np.full(4, 6.0))
    rep = finite_difference_check(
        lambda tape, p: ad.sum(FreeVariable().state_vector(tape, p, 6, LSTM2)),
        {"init.state": np.array([0.1, 0.2, 0.3, 0.4])})
    assert rep.passed


def test_free_state_noise_std():
    t = Tape()
    strat = FreeVariable(noise_std=0.1)
    vec = strat.state_vector(t, {"init.state": t.param(np.zeros(4))}, 10_000, LSTM2,
                             rng=np.random.default_rng(0))
    assert np.max(np.abs(vec.value.std(axis=0) - 0.1)) < 0.01


def test_free_variable_rejects_negative_noise():
    with pytest.raises(ValueError):
        FreeVariable(noise_std=-0.1)


def _token_setup(rng, E=4, H=3):
    net = TokenContext()
    cell = CellSpec("fw", H)
    params = {"embed.table": rng.standard_normal((37, E)), **Contextual(net).init_params(rng, cell, E)}
    return net, cell, params


def test_contextual_zero_net_reduces_to_zero_state():
    rng = np.random.default_rng(0)
    for net, cell in [(FeatureContext(), LSTM2), (TokenContext(), CellSpec("fw", 3))]:
        strat = Contextual(net)
        params = strat.init_params(rng, cell, embedding_dim=4)
        params = {k: np.zeros_like(v) for k, v in params.items()}
        ctx = np.ones((2, 2)) if isinstance(net, FeatureContext) else np.array([1, 2])
        if isinstance(net, TokenContext):
            params["embed.table"] = rng.standard_normal((37, 4))
        t = Tape()
        vec = strat.state_vector(t, _bind(t, params), 2, cell, ctx)
        np.testing.assert_array_equal(vec.value, np.zeros((2, cell.state_size)))


def test_contextual_identical_contexts_give_identical_rows():
    rng = np.random.default_rng(1)
    net, cell, params = _token_setup(rng)
    t = Tape()
    s = contextual_state(Contextual(net), t, _bind(t, params), np.array([5, 9, 5]), cell)
    np.testing.assert_array_equal(s.h.value[0], s.h.value[2])
    assert not np.array_equal(s.h.value[0], s.h.value[1])


def test_contextual_gradient_reaches_first_token_embedding_row():
    rng = np.random.default_rng(2)
    net, cell, params = _token_setup(rng)
    params["init.ctx.out.b"] = rng.standard_normal(3) * 0.1
    ids = np.array([7, 7, 2])
    strat = Contextual(net)
    rep = finite_difference_check(
        lambda t, p: ad.sum(ad.mul(strat.state_vector(t, p, 3, cell, ids), strat.state_vector(t, p, 3, cell, ids))),
        params)
    assert rep.passed, rep.errors
    t = Tape()
    nodes = _bind(t, params)
    g = backward(t, ad.sum(strat.state_vector(t, nodes, 3, cell, ids)))
    touched = np.flatnonzero(np.abs(g[nodes["embed.table"]]).sum(axis=1))
    assert set(touched) == {2, 7}


def test_contextual_dimension_mismatch_rejected():
    rng = np.random.default_rng(3)
    strat = Contextual(FeatureContext(2, 5))
    params = strat.init_params(rng, LSTM2)
    t = Tape()
    with pytest.raises(ShapeError):
        strat.state_vector(t, _bind(t, params), 2, LSTM2, np.ones((2, 3)))
    with pytest.raises(ShapeError):
        strat.state_vector(t, _bind(t, params), 2, CellSpec("lstm", 3), np.ones((2, 2)))


def _stochastic(rng, sigma):
    strat = ContextualStochastic(FeatureContext(2, 5), sigma_init=sigma)
    params = strat.init_params(rng, LSTM2)
    params["init.ctx.out.b"] = rng.standard_normal(4)
    return strat, params


def test_stochastic_sigma_raw_initialized_as_vector():
    strat, params = _stochastic(np.random.default_rng(0), -3.0)
    np.testing.assert_array_equal(params["init.sigma_raw"], np.full(4, -3.0))


def test_stochastic_zero_eps_returns_mean():
    rng = np.random.default_rng(4)
    strat, params = _stochastic(rng, 0.0)
    ctx = rng.uniform(size=(3, 2))
    t = Tape()
    nodes = _bind(t, params)
    mu = strat.mean(nodes, ctx, 3, LSTM2).value
    s = stochastic_contextual_state(strat, t, nodes, ctx, LSTM2, rng, eps=np.zeros((3, 4)))
    np.testing.assert_array_equal(np.concatenate([s.h.value, s.c.value], 1), mu)
    unsampled = strat.state_vector(t, nodes, 3, LSTM2, ctx, sample=False).value
    np.testing.assert_array_equal(unsampled, mu)


def test_stochastic_vanishing_scale():
    rng = np.random.default_rng(5)
    strat, params = _stochastic(rng, -20.0)
    ctx = np.ones((1, 2))
    t = Tape()
    nodes = _bind(t, params)
    a = strat.state_vector(t, nodes, 1, LSTM2, ctx, rng=rng).value
    b = strat.state_vector(t, nodes, 1, LSTM2, ctx, rng=rng).value
    assert np.max(np.abs(a - b)) < 1e-7


def test_stochastic_monte_carlo_moments():
    rng = np.random.default_rng(6)
    strat, params = _stochastic(rng, 0.0)
    n = 10_000
    ctx = np.tile([[0.3, 0.7]], (n, 1))
    t = Tape()
    nodes = _bind(t, params)
    mu = strat.mean(nodes, ctx[:1], 1, LSTM2).value[0]
    draws = strat.state_vector(t, nodes, n, LSTM2, ctx, rng=rng).value
    assert np.max(np.abs(draws.mean(0) - mu)) < 3 * np.log(2) / 100
    assert np.max(np.abs(draws.std(0) - np.log(2))) < 0.03


def test_reparameterization_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    strat, params = _stochastic(rng, -0.5)
    ctx = rng.uniform(size=(5, 2))
    eps = rng.standard_normal((5, 4))
    rep = finite_difference_check(
        lambda t, p: ad.sum(ad.tanh(strat.state_vector(t, p, 5, LSTM2, ctx, eps=eps))), params)
    assert rep.passed, rep.errors
    # the scale path: d/d sigma_raw of sum(state) = sigmoid(sigma_raw) * sum_b eps
    t = Tape()
    nodes = _bind(t, params)
    g = backward(t, ad.sum(strat.state_vector(t, nodes, 5, LSTM2, ctx, eps=eps)))
    np.testing.assert_allclose(g[nodes["init.sigma_raw"]], eps.sum(0) / (1 + np.exp(0.5)), rtol=1e-12)


@pytest.mark.parametrize("name, cls", [("zero", Zero), ("free", FreeVariable), ("learned", Contextual),
                                       ("learned-distribution", ContextualStochastic)])
def test_make_strategy(name, cls):
    strat = make_strategy(name, FeatureContext())
    assert type(strat) is cls and strat.name == name


def test_make_strategy_rejects_unknown():
    with pytest.raises(ValueError, match="unknown init strategy"):
        make_strategy("random")


@pytest.mark.parametrize("name", ["zero", "free", "learned", "learned-distribution"])
def test_strategies_are_interchangeable(name):
    # every strategy plugs into the same model and produces a trainable loss
    from ctxrnn.models import LcdNetwork, bind

    net = LcdNetwork(init=name, hidden=4, context_hidden=3, noise_std=0.1)
    rng = np.random.default_rng(0)
    params = net.init_params(rng)
    values = rng.uniform(0, 1, size=(3, 6))
    t = Tape()
    nodes = bind(t, params)
    loss, preds = net.loss(t, nodes, values, np.array([0.1, 0.5, 0.9]), rng=rng)
    g = backward(t, loss)
    assert preds.shape == (3, 5)
    assert all(np.all(np.isfinite(g[n])) for n in nodes.values())
