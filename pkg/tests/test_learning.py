import numpy as np
import pytest

from oracles import equilibrated_energy_oracle, fd_gradient
from pcbench import model
from pcbench.data import toy_regression
from pcbench.errors import NonFiniteGradientError
from pcbench.inference import InferenceConfig
from pcbench.learning import (
    METRIC_COLUMNS,
    MetricWriter,
    OptimState,
    TrainConfig,
    adam_step,
    pc_train_step,
    pc_weight_gradient,
    sgd_step,
    steps_to_threshold,
    train,
)
from pcbench.model import Batch, NetworkSpec
from pcbench.numerics import Rng


def test_exact_pc_step_on_single_unit_network():
    spec = NetworkSpec.create([1, 1, 1])
    weights = [np.array([[1.0]]), np.array([[1.0]])]
    batch = Batch(np.array([[1.0]]), np.array([[-1.0]]))
    cfg = TrainConfig(lr=0.1, analytic_inference=True)
    new, _, metrics = pc_train_step(spec, weights, batch, cfg, None, OptimState("sgd", 0.1))
    assert new[0].item() == pytest.approx(1.0 - 0.1)
    assert new[1].item() == pytest.approx(1.0)
    assert metrics["energy_pre"] == pytest.approx(2.0)
    assert metrics["energy"] == pytest.approx(1.0)


def test_pc_gradient_at_equilibrium_is_gradient_of_equilibrated_energy():
    spec = NetworkSpec.create([2, 3, 3, 2])
    weights = model.init_weights(spec, Rng(3))
    rng = np.random.default_rng(3)
    batch = Batch(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)))
    grads, _ = pc_weight_gradient(spec, weights, batch, InferenceConfig(), analytic=True)

    def f_star(theta):
        return equilibrated_energy_oracle(model.unflatten(spec, theta), [1.0] * 3, [0] * 3, batch.x, batch.y)

    assert np.allclose(model.flatten(grads), fd_gradient(f_star, model.flatten(weights)), atol=1e-7)


def test_sgd_and_adam_updates():
    w = [np.array([[1.0, -2.0]])]
    g = [np.array([[0.5, 0.5]])]
    assert np.allclose(sgd_step(w, g, 0.1)[0], [[0.95, -2.05]])
    new, state = adam_step(w, g, OptimState("adam", 0.01))
    assert np.allclose(new[0], [[0.99, -2.01]])
    assert state.step == 1


def test_nonfinite_gradient_is_refused():
    with pytest.raises(NonFiniteGradientError):
        sgd_step([np.zeros(2)], [np.array([np.nan, 0.0])], 0.1)


def test_bp_training_reduces_loss_and_logs_every_step(tmp_path):
    spec = NetworkSpec.create([1, 4, 1])
    data = toy_regression(256, Rng(0))
    cfg = TrainConfig(algorithm="bp", epochs=3, batch_size=32, lr=0.05, optimiser="sgd", eval_period=4)
    writer = MetricWriter(tmp_path / "m.csv")
    _, rows = train(spec, model.init_weights(spec, Rng(1)), data, cfg, Rng(2), data, writer)
    losses = [r["loss"] for r in rows if r["split"] == "train"]
    assert len(losses) == 24 and losses[-1] < losses[0]
    header, *body = (tmp_path / "m.csv").read_text().splitlines()
    assert header == ",".join(METRIC_COLUMNS)
    assert all(line.endswith(",") for line in body)


def test_pc_training_on_toy_regression_fits():
    spec = NetworkSpec.create([1, 3, 1])
    data = toy_regression(256, Rng(0))
    cfg = TrainConfig(epochs=5, batch_size=32, lr=0.05, inference=InferenceConfig("gd", 0.1, 20))
    weights, rows = train(spec, model.init_weights(spec, Rng(1)), data, cfg, Rng(2))
    assert model.mse_loss(spec, weights, data.as_batch()) < 0.5 * rows[0]["loss"]


def test_max_steps_stops_early():
    spec = NetworkSpec.create([1, 1])
    data = toy_regression(100, Rng(0))
    _, rows = train(spec, model.init_weights(spec, Rng(0)), data, TrainConfig(algorithm="bp", batch_size=10), Rng(0), max_steps=3)
    assert len(rows) == 3


def test_steps_to_threshold():
    assert steps_to_threshold([3.0, 1.0, 0.005, 0.001], 0.01) == 2
    assert steps_to_threshold([1.0, 0.5], 0.01) is None


@pytest.mark.parametrize("kwargs", [{"algorithm": "ep"}, {"epochs": 0}, {"batch_size": 0}])
def test_invalid_train_config(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_invalid_optimiser():
    with pytest.raises(ValueError):
        OptimState("rmsprop", 0.1)
    with pytest.raises(ValueError):
        OptimState("sgd", 0.0)


def test_zero_inference_steps_recovers_backprop_at_the_output_layer():
    spec = NetworkSpec.create([3, 4, 4, 2], "tanh")
    weights = model.init_weights(spec, Rng(6))
    rng = np.random.default_rng(6)
    batch = Batch(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)))
    pc, _ = pc_weight_gradient(spec, weights, batch, InferenceConfig("gd", 0.1, 0))
    _, bp = model.mse_loss_and_bp_gradient(spec, weights, batch)
    assert np.allclose(pc[-1], bp[-1], atol=1e-14)
    assert all(not np.any(g) for g in pc[:-1])
