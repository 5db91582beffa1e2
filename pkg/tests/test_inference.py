import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import effective_maps, equilibrium_lstsq
from pcbench import model
from pcbench.errors import DivergenceError, UnsupportedSpecError
from pcbench.inference import (
    InferenceConfig,
    analytic_dln_inference,
    forward_activities,
    gd_inference,
    heun_inference,
    run_inference,
)
from pcbench.model import Batch, NetworkSpec
from pcbench.numerics import Rng
from pcbench.theory import assemble_activity_hessian


def linear_case(seed, widths=(3, 4, 4, 2), resnet=False, b=5):
    spec = NetworkSpec.create(list(widths), "linear", "SP", resnet=resnet)
    weights = model.init_weights(spec, Rng(seed))
    rng = np.random.default_rng(seed)
    return spec, weights, Batch(rng.normal(size=(b, widths[0])), rng.normal(size=(b, widths[-1])))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_analytic_equilibrium_matches_least_squares(seed, resnet):
    spec, weights, batch = linear_case(seed, (3, 4, 4, 4, 2), resnet)
    z = analytic_dln_inference(spec, weights, batch)
    maps = effective_maps(weights, spec.premultipliers, spec.skips)
    for i in range(batch.size):
        ref, _ = equilibrium_lstsq(maps, batch.x[i], batch.y[i])
        for got, want in zip(z, ref):
            assert np.allclose(got[i], want, atol=1e-10)


@pytest.mark.parametrize("solver", ["gd", "heun"])
def test_iterative_solvers_reach_the_analytic_equilibrium(solver):
    spec, weights, batch = linear_case(2)
    z0 = forward_activities(spec, weights, batch)
    z, trace = run_inference(spec, weights, z0, batch, InferenceConfig(solver, 0.1, 2000, 1e-10))
    exact = analytic_dln_inference(spec, weights, batch)
    assert trace.converged
    assert all(np.allclose(a, b, atol=1e-8) for a, b in zip(z, exact))


def test_gd_energy_is_non_increasing_for_stable_step():
    spec, weights, batch = linear_case(7)
    z0 = forward_activities(spec, weights, batch)
    _, trace = gd_inference(spec, weights, z0, batch, InferenceConfig("gd", 0.05, 100, 0.0))
    energies = [trace.initial_energy] + trace.energies
    assert all(b <= a + 1e-15 for a, b in zip(energies, energies[1:]))


def test_trace_lengths_equal_steps_taken(tmp_path):
    spec, weights, batch = linear_case(1)
    z0 = forward_activities(spec, weights, batch)
    _, trace = heun_inference(spec, weights, z0, batch, InferenceConfig("heun", 0.1, 7, 0.0))
    assert trace.steps == len(trace.energies) == len(trace.grad_norms) == 7
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,energy,grad_norm" and len(lines) == 9


def test_zero_steps_leaves_activities_at_the_forward_pass():
    spec, weights, batch = linear_case(3)
    z0 = forward_activities(spec, weights, batch)
    z, trace = gd_inference(spec, weights, z0, batch, InferenceConfig("gd", 0.1, 0))
    assert trace.steps == 0 and trace.final_energy == trace.initial_energy
    assert all(np.array_equal(a, b) for a, b in zip(z, z0))
    assert np.isclose(trace.initial_energy, model.mse_loss(spec, weights, batch))


def test_divergence_raises():
    spec, weights, batch = linear_case(4)
    weights = [3.0 * w for w in weights]
    z0 = forward_activities(spec, weights, batch)
    with pytest.raises(DivergenceError):
        gd_inference(spec, weights, z0, batch, InferenceConfig("gd", 5.0, 200, 0.0))


def test_halving_rescues_an_unstable_step_size():
    spec, weights, batch = linear_case(4)
    weights = [3.0 * w for w in weights]
    z0 = forward_activities(spec, weights, batch)
    lam_max = np.linalg.eigvalsh(assemble_activity_hessian(spec, weights))[-1]
    beta = 3.0 / lam_max
    _, trace = gd_inference(spec, weights, z0, batch, InferenceConfig("gd", beta, 300, 0.0, halving_schedule=6))
    assert trace.halvings >= 1 and trace.step_size < beta
    assert trace.final_energy <= trace.initial_energy


def test_masked_equilibrium_is_stationary():
    spec, weights, batch = linear_case(8, b=4)
    mask = (np.random.default_rng(1).random(batch.y.shape) > 0.4).astype(float)
    masked = Batch(batch.x, batch.y, mask)
    z = analytic_dln_inference(spec, weights, masked)
    grads = model.activity_gradient(spec, weights, z, masked)
    assert max(np.abs(g).max() for g in grads) < 1e-10


def test_free_output_relaxes_to_the_forward_prediction():
    spec, weights, batch = linear_case(5)
    hidden, pred = model.forward(spec, weights, batch.x)
    z0 = [h + 0.1 for h in hidden] + [pred + 0.1]
    z, trace = gd_inference(spec, weights, z0, batch, InferenceConfig("gd", 0.1, 5000, 1e-12), clamp_output=False)
    assert trace.converged
    assert np.allclose(z[-1], pred, atol=1e-9)


def test_analytic_inference_requires_linear_network():
    spec = NetworkSpec.create([2, 3, 1], "tanh")
    with pytest.raises(UnsupportedSpecError):
        analytic_dln_inference(spec, model.init_weights(spec, Rng(0)), Batch(np.ones((1, 2)), np.ones((1, 1))))


@pytest.mark.parametrize(
    "kwargs", [{"solver": "rk4"}, {"step_size": 0.0}, {"max_steps": -1}, {"grad_tol": -1.0}, {"halving_schedule": -2}]
)
def test_invalid_inference_config(kwargs):
    with pytest.raises(ValueError):
        InferenceConfig(**kwargs)
