import numpy as np
import pytest

from edgeofchaos import esn
from edgeofchaos.activations import synthesize_hp
from edgeofchaos.data import chrono_split, mackey_glass
from edgeofchaos.dynamics import recurrence_plot

MG = mackey_glass(1200, transient=300)


def small(**kw):
    base = dict(num_layers=1, reservoir_size=50, washout=50)
    base.update(kw)
    return esn.DeepEsnConfig(**base)


def hp_template(**kw):
    base = dict(num_layers=2, reservoir_size=100, activation=synthesize_hp(), input_scaling=0.1,
                inter_scaling=0.1, spectral_radius=0.9, preactivation_clip=3.0)
    base.update(kw)
    return esn.DeepEsnConfig(**base)


def test_build_is_deterministic():
    a = esn.build(small(seed=7, num_layers=2))
    b = esn.build(small(seed=7, num_layers=2))
    for x, y in zip(a.inputs + a.recurrent + a.biases, b.inputs + b.recurrent + b.biases):
        assert np.array_equal(x, y)


def test_size_one_reservoir():
    res = esn.build(small(reservoir_size=1))
    assert abs(res.recurrent[0][0, 0]) == pytest.approx(0.9, abs=1e-15)


def test_layer_structure():
    res = esn.build(small(num_layers=3, reservoir_size=(10, 20, 30)))
    assert len(res.recurrent) == 3 and len(res.inputs) == 3 and len(res.inter_layer) == 2
    assert res.inputs[0].shape == (10, 1) and res.inter_layer[1].shape == (30, 20)
    assert res.state_dim == 60


@pytest.mark.parametrize("rho", [0.3, 0.9, 0.99])
def test_spectral_radius_exact(rho):
    res = esn.build(small(num_layers=2, reservoir_size=80, spectral_radius=rho))
    for w in res.recurrent:
        assert esn.spectral_radius(w) == pytest.approx(rho, abs=1e-10)


@pytest.mark.parametrize("bad", [dict(spectral_radius=1.0), dict(num_layers=0), dict(leak_rate=0.0),
                                 dict(ridge_lambda=-1.0), dict(density=0.0), dict(preactivation_clip=-1.0),
                                 dict(reservoir_size=(5, 5))])
def test_invalid_configs(bad):
    with pytest.raises(esn.EsnConfigError):
        esn.build(small(**bad))


def test_zero_input_stays_at_rest():
    states = esn.run_states(esn.build(small(num_layers=2)), np.zeros(100), washout=0)
    assert all(np.all(s == 0) for s in states)


def test_washout_must_be_shorter_than_series():
    with pytest.raises(ValueError):
        esn.run_states(esn.build(small()), np.zeros(10), washout=10)


def test_echo_state_property_simulation():
    cfg = small(reservoir_size=100, spectral_radius=0.9)
    div = esn.esp_divergence(cfg, MG[:600], seed=1)
    assert div[-1] < 1e-6


def test_hp_reservoir_stays_finite():
    states = esn.run_states(esn.build(hp_template()), MG, washout=0)
    assert all(np.all(np.isfinite(s)) for s in states)


def test_readout_exact_linear_fit():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + 0.25
    w = esn.fit_readout(x, y, 0.0)
    assert np.max(np.abs(esn.apply_readout(w, x)[:, 0] - y)) < 1e-12


def test_readout_shrinks_to_zero():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(30, 4)), rng.normal(size=30)
    assert np.max(np.abs(esn.fit_readout(x, y, 1e12))) < 1e-9


def test_readout_hand_solved_system():
    # One feature plus bias: X = [[1,1],[2,1],[3,1]], y = [1,2,2], lambda = 1.
    w = esn.fit_readout([[1.0], [2.0], [3.0]], [1.0, 2.0, 2.0], 1.0)
    gram = np.array([[14.0 + 1, 6.0], [6.0, 3.0 + 1]])
    rhs = np.array([11.0, 5.0])
    assert np.allclose(w[:, 0], np.linalg.solve(gram, rhs), atol=1e-14)


def test_readout_singular_reported():
    x = np.ones((10, 2))
    with pytest.raises(esn.SingularReadoutError):
        esn.fit_readout(x, np.arange(10.0), 0.0)
    with pytest.raises(esn.SingularReadoutError):
        esn.fit_readout(np.full((5, 2), np.nan), np.zeros(5), 1.0)


def test_training_residual_non_decreasing_in_ridge():
    res = esn.build(small())
    residuals = [esn.train(small(ridge_lambda=lam), MG, train_stop=800, reservoir=res).train_rmse
                 for lam in (0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 100.0)]
    assert all(b >= a - 1e-12 for a, b in zip(residuals, residuals[1:]))


def test_predict_reproduces_training_error():
    cfg = small()
    trained = esn.train(cfg, MG, train_stop=800)
    pred = esn.predict(trained, MG[:799])[cfg.washout:, 0]
    rmse = np.sqrt(np.mean((pred - MG[cfg.washout + 1: 800]) ** 2))
    assert rmse == pytest.approx(trained.train_rmse, rel=1e-9)


def test_prediction_beats_mean_baseline():
    split = chrono_split(len(MG), 0.7, 0.1, 0.2)
    ev = esn.evaluate_split(small(reservoir_size=100), MG, split)
    assert ev.test.rmse < MG[split.test.start:].std()


def test_constant_series_constant_prediction():
    series = np.full(400, 0.7)
    trained = esn.train(small(), series)
    pred = esn.predict(trained, series)[100:, 0]
    assert np.max(np.abs(pred - 0.7)) < 1e-6


def test_predictions_bit_identical():
    split = chrono_split(len(MG), 0.7, 0.1, 0.2)
    a = esn.evaluate_split(small(seed=3), MG, split).predictions
    b = esn.evaluate_split(small(seed=3), MG, split).predictions
    assert np.array_equal(a, b, equal_nan=True)


def test_flag_anomalies():
    obs = np.sin(np.arange(50.0))
    assert esn.flag_anomalies(obs, obs, 0.1) == []
    spiked = obs.copy()
    spiked[17] += 1.0
    flags = esn.flag_anomalies(spiked, obs, 0.1)
    assert [f.time_index for f in flags] == [17] and flags[0].error > flags[0].threshold
    other = obs + np.where(np.arange(50) % 5 == 0, 0.01, 0.0)
    assert [f.time_index for f in esn.flag_anomalies(other, obs, 0.0)] == list(range(0, 50, 5))


def test_predictions_csv_header():
    text = esn.predictions_csv([1.0, 2.0], [1.0, 3.0], 0.5, offset=10)
    lines = text.splitlines()
    assert lines[0] == "time_index,observed,predicted,error,flagged"
    assert lines[2].startswith("11,") and lines[2].endswith(",1")


def test_model_save_load_round_trip(tmp_path):
    trained = esn.train(small(num_layers=2, activation=synthesize_hp(), preactivation_clip=3.0), MG,
                        train_stop=700)
    trained.save(tmp_path / "model.json")
    back = esn.TrainedEsn.load(tmp_path / "model.json")
    assert np.array_equal(esn.predict(back, MG[:300]), esn.predict(trained, MG[:300]))
    assert back.config == trained.config


def test_recurrence_rate_above_degenerate_reservoir():
    split = chrono_split(len(MG), 0.7, 0.1, 0.2)
    window = slice(split.train.stop - 200, split.train.stop)

    def rate(cfg):
        states = esn.concat_states(esn.run_states(esn.build(cfg), MG[: split.train.stop], washout=0))
        return recurrence_plot(states[window]).recurrence_rate

    fitted = hp_template(num_layers=3, reservoir_size=300)
    degenerate = hp_template(num_layers=1, reservoir_size=1)
    assert rate(fitted) > rate(degenerate)
