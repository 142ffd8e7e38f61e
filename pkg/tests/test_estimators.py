import numpy as np
import pytest
from sklearn.base import clone

from ctxrnn.data import gen_art_dataset, gen_lcd_splits, lcd_arrays
from ctxrnn.estimators import ArtClassifier, LcdSequenceModel

STRATEGIES = ["zero", "free", "learned", "learned-distribution"]


@pytest.fixture(scope="module")
def art_small():
    return gen_art_dataset(256, 128, 4, seed=0)


@pytest.fixture(scope="module")
def lcd_small():
    train, valid = gen_lcd_splits(8, 8, seed=0)
    return lcd_arrays(train), lcd_arrays(valid)


def _tiny_art(**kw):
    base = dict(hidden_size=8, embedding_dim=6, epochs=1, batch_size=64, random_state=0)
    return ArtClassifier(**{**base, **kw})


def _tiny_lcd(**kw):
    base = dict(hidden_size=8, context_hidden=5, epochs=1, batch_size=16, random_state=0)
    return LcdSequenceModel(**{**base, **kw})


def test_sklearn_params_round_trip():
    est = ArtClassifier(init="zero", hidden_size=7)
    assert est.get_params()["hidden_size"] == 7
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est
    est.set_params(epochs=3)
    assert est.epochs == 3
    assert clone(LcdSequenceModel(sigma_init=-1.0)).sigma_init == -1.0


def test_unfitted_estimator_raises(art_small):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        ArtClassifier().predict(art_small[0][0])


def test_rejects_malformed_inputs(art_small):
    (x, y), _ = art_small
    with pytest.raises(ValueError):
        _tiny_art().fit(x, y[:-1])
    bad = x.copy()
    bad[0, 0] = 99
    with pytest.raises(ValueError):
        _tiny_art().fit(bad, y)
    with pytest.raises(ValueError):
        _tiny_lcd().fit(np.ones((3, 1)), [1.0, 1.0, 1.0])


@pytest.mark.parametrize("init", STRATEGIES)
def test_art_fit_is_deterministic(art_small, init):
    (x, y), valid = art_small
    a = _tiny_art(init=init, noise_std=0.1).fit(x, y, validation_data=valid)
    b = _tiny_art(init=init, noise_std=0.1).fit(x, y, validation_data=valid)
    strip = lambda h: [{k: v for k, v in r.items() if k != "seconds"} for r in h]  # noqa: E731
    assert strip(a.history_) == strip(b.history_)
    for k in a.params_:
        assert a.params_[k].tobytes() == b.params_[k].tobytes()


def test_history_layout(art_small):
    (x, y), valid = art_small
    est = _tiny_art(epochs=2).fit(x, y, validation_data=valid)
    assert [(r["epoch"], r["split"]) for r in est.history_] == [
        (0, "valid"), (1, "train"), (1, "valid"), (2, "train"), (2, "valid")]
    assert all(0 <= r["accuracy"] <= 1 for r in est.history_)


def test_epochs_zero_only_initializes(art_small):
    (x, y), _ = art_small
    est = _tiny_art(epochs=0).fit(x, y)
    assert est.n_epochs_ == 0 and est.optimizer_.t == 0


def test_accuracy_is_exact_argmax_fraction(art_small):
    (x, y), _ = art_small
    est = _tiny_art(epochs=0).fit(x, y)
    logits = est.decision_function(x[:5])
    pred = [int(np.argmax(row)) for row in logits]
    hits = sum(int(p == t) for p, t in zip(pred, y[:5]))
    assert est.evaluate(x[:5], y[:5])["accuracy"] == hits / 5
    assert list(est.predict(x[:5])) == pred


def test_predict_proba_rows_sum_to_one(art_small):
    (x, y), _ = art_small
    p = _tiny_art(epochs=0).fit(x, y).predict_proba(x[:20])
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_evaluate_is_repeatable(art_small):
    (x, y), (xv, yv) = art_small
    est = _tiny_art(init="learned-distribution").fit(x, y)
    assert est.evaluate(xv, yv) == est.evaluate(xv, yv)


def test_untrained_art_is_at_chance():
    _, (xv, yv) = gen_art_dataset(1, 20_000, 4, seed=1)
    est = ArtClassifier(epochs=0, random_state=0).fit(xv[:10], yv[:10])
    m = est.evaluate(xv, yv)
    assert abs(m["accuracy"] - 0.1) <= 0.02
    assert abs(m["log_likelihood"] + np.log(10)) <= 0.05


@pytest.mark.slow
@pytest.mark.parametrize("init", STRATEGIES)
def test_art_is_learnable_end_to_end(init):
    (x, y), (xv, yv) = gen_art_dataset(2000, 500, 2, seed=0)
    est = ArtClassifier(init=init, epochs=20, random_state=0).fit(x, y)
    assert est.evaluate(xv, yv)["accuracy"] > 0.5


def test_zero_baseline_is_batch_independent(art_small, lcd_small):
    (x, y), _ = art_small
    art = _tiny_art(init="zero").fit(x, y)
    full = art.decision_function(x[:12])
    for i in range(12):
        assert np.max(np.abs(art.decision_function(x[i:i + 1]) - full[i])) < 1e-10
    (v, p), _ = lcd_small
    lcd = _tiny_lcd(init="zero").fit(v, p)
    full = lcd.predict(v[:6], p[:6])
    for i in range(6):
        assert np.max(np.abs(lcd.predict(v[i:i + 1], p[i:i + 1]) - full[i])) < 1e-10


def test_lcd_zero_output_on_constant_sequences_has_zero_mse():
    est = _tiny_lcd(init="zero", epochs=0).fit(np.ones((4, 6)), np.ones(4))
    for k in est.params_:
        if k.startswith("out."):
            est.params_[k][...] = 0.0
    assert est.evaluate(np.full((4, 6), 2.5), np.ones(4))["mse"] == 0.0


@pytest.mark.parametrize("init", STRATEGIES)
def test_untrained_lcd_no_better_than_constant_predictor(lcd_small, init):
    (v, p), (vv, pv) = lcd_small
    est = LcdSequenceModel(init=init, epochs=0).fit(v, p)
    deltas = np.diff(vv / 4.004, axis=1)
    best_constant = float(np.mean((deltas - deltas.mean()) ** 2))
    assert est.evaluate(vv, pv)["mse"] >= best_constant - 1e-9


@pytest.mark.parametrize("init", ["zero", "learned-distribution"])
def test_lcd_fit_is_deterministic(lcd_small, init):
    (v, p), valid = lcd_small
    a = _tiny_lcd(init=init, epochs=2).fit(v, p, validation_data=valid)
    b = _tiny_lcd(init=init, epochs=2).fit(v, p, validation_data=valid)
    assert [r["mse"] for r in a.history_] == [r["mse"] for r in b.history_]


def test_lcd_input_width_follows_strategy():
    for init, width in [("zero", 2), ("free", 2), ("learned", 1), ("learned-distribution", 1)]:
        est = _tiny_lcd(init=init)
        est._initialize()
        assert est.params_["lstm.w_x"].shape[0] == width, init
    est = _tiny_lcd(init="learned", append_period=True)
    est._initialize()
    assert est.params_["lstm.w_x"].shape[0] == 2


def test_overfit_tiny_run_train_beats_valid():
    (x, y), (xv, yv) = gen_art_dataset(64, 256, 2, seed=3)
    est = ArtClassifier(hidden_size=20, embedding_dim=16, epochs=60, batch_size=16,
                        learning_rate=3e-3, random_state=0).fit(x, y)
    assert est.evaluate(x, y)["log_likelihood"] > est.evaluate(xv, yv)["log_likelihood"]


def test_lcd_train_loss_decreases(lcd_small):
    (v, p), valid = lcd_small
    est = _tiny_lcd(epochs=15, learning_rate=1e-2).fit(v, p, validation_data=valid)
    valid_mse = [r["mse"] for r in est.history_ if r["split"] == "valid"]
    assert valid_mse[-1] < valid_mse[0]


def test_sample_shapes_and_start(lcd_small):
    (v, p), _ = lcd_small
    est = _tiny_lcd(sigma_init=0.0).fit(v, p)
    traj = est.sample(3.1, 2.0, n_samples=10, random_state=0)
    assert traj.shape == (10, 25)
    assert np.all(traj[:, 0] == 3.1)
    assert np.max(np.abs(traj[0] - traj[1])) > 0
    np.testing.assert_array_equal(traj, est.sample(3.1, 2.0, n_samples=10, random_state=0))


def test_sample_degenerate_scale_gives_identical_trajectories(lcd_small):
    (v, p), _ = lcd_small
    est = _tiny_lcd().fit(v, p)
    est.params_["init.sigma_raw"][...] = -20.0
    traj = est.sample(2.5, 3.0, n_samples=10, random_state=1)
    assert np.max(np.abs(traj - traj[0])) < 1e-6
