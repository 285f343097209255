import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfkflow.kernel_field import KernelField, evaluate_velocity
from dfkflow.losses import LossConfig, Objective, ObservationSet
from dfkflow.matrix_kernels import DFK_WEN4
from dfkflow.optimizer import AdamState, TrainConfig, TrainingDiverged, adam_step, run_training, write_history_csv


def test_zero_gradient_leaves_params():
    p = {"weights": np.array([1.0, -2.0])}
    out = adam_step(AdamState(), p, {"weights": np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(out["weights"], p["weights"])


def test_first_step_closed_form():
    out = adam_step(AdamState(), {"w": np.array(1.0)}, {"w": np.array(2.0)}, 0.1)
    assert float(out["w"]) == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8), abs=1e-12)
    assert float(out["w"]) == pytest.approx(0.9, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 1e3), st.floats(1e-4, 1.0))
def test_first_step_is_sign_of_gradient(p0, g, lr):
    # the bias-corrected first step moves every coordinate by ~lr regardless of |g|
    up = adam_step(AdamState(), {"w": np.array(p0)}, {"w": np.array(g)}, lr)["w"]
    down = adam_step(AdamState(), {"w": np.array(p0)}, {"w": np.array(-g)}, lr)["w"]
    assert p0 - float(up) == pytest.approx(lr, rel=1e-5)
    assert float(up) + float(down) == pytest.approx(2 * p0, abs=1e-12)


def test_per_parameter_rates_and_errors():
    out = adam_step(AdamState(), {"a": np.ones(1), "b": np.ones(1)}, {"a": np.ones(1), "b": np.ones(1)},
                    {"a": 0.1, "b": 0.01})
    assert out["a"][0] == pytest.approx(0.9) and out["b"][0] == pytest.approx(0.99)
    with pytest.raises(TrainingDiverged):
        adam_step(AdamState(), {"a": np.ones(2)}, {"a": np.array([1.0, np.nan])}, 0.1)
    with pytest.raises(ValueError):
        adam_step(AdamState(), {"a": np.ones(2)}, {"a": np.ones(3)}, 0.1)


def toy_problem(perturb=0.3):
    """One kernel and ten exact samples of its own field; training starts from a perturbed weight."""
    true = KernelField(DFK_WEN4, np.zeros((1, 2)), [1.0], np.array([[[0.01, -0.005]]]))
    pts = np.random.default_rng(0).uniform(-0.7, 0.7, (10, 2))
    obs = ObservationSet(pts, evaluate_velocity(true, 0, pts))
    start = true.copy(weights=true.weights * (1 + perturb))
    return start, Objective(LossConfig(), obs), true


def test_single_kernel_toy_converges():
    start, objective, true = toy_problem()
    # the unsquared norm keeps Adam oscillating near the optimum; a short plateau window damps it
    cfg = TrainConfig(mode="fullbatch", epochs=200, lr=1e-4, plateau_window=5)
    field, history = run_training(start, objective, cfg)
    assert history[0].report.total > 1e-2
    assert history[-1].report.total < 1e-4
    assert len(history) == 201


def test_zero_kernel_history_is_constant():
    pts = np.random.default_rng(1).uniform(-1, 1, (12, 2))
    obs = ObservationSet(pts, np.ones((12, 2)))
    empty = KernelField(DFK_WEN4, np.zeros((0, 2)), np.zeros(0), np.zeros((1, 0, 2)))
    _, history = run_training(empty, Objective(LossConfig(), obs), TrainConfig(epochs=5))
    totals = [row.report.total for row in history]
    assert len(totals) == 6 and len(set(totals)) == 1


@pytest.mark.parametrize("mode", ["minibatch", "fullbatch"])
def test_seeded_runs_are_bit_identical(mode):
    start, objective, _ = toy_problem()
    cfg = TrainConfig(mode=mode, epochs=6, batch_size=4, lr=1e-3, seed=5, deterministic=True,
                      trainable=("weights", "centers", "radii"))
    a_field, a = run_training(start, objective, cfg)
    b_field, b = run_training(start, objective, cfg)
    assert [r.as_dict() for r in a] == [r.as_dict() for r in b]
    assert a_field.weights.tobytes() == b_field.weights.tobytes()
    assert a_field.centers.tobytes() == b_field.centers.tobytes()


def test_minibatch_lr_decays_exponentially():
    start, objective, _ = toy_problem()
    _, history = run_training(start, objective, TrainConfig(epochs=4, batch_size=5, lr=1e-3, gamma=0.5))
    assert [row.lr for row in history[1:]] == pytest.approx([1e-3, 5e-4, 2.5e-4, 1.25e-4])


def test_fullbatch_plateau_cuts_lr():
    # at the optimum the loss cannot improve, so the rate drops by 10% per window
    true = KernelField(DFK_WEN4, np.zeros((1, 2)), [1.0], np.array([[[0.01, 0.0]]]))
    pts = np.random.default_rng(2).uniform(-0.5, 0.5, (10, 2))
    obs = ObservationSet(pts, evaluate_velocity(true, 0, pts))
    cfg = TrainConfig(mode="fullbatch", epochs=20, lr=1e-12, plateau_window=5)
    _, history = run_training(true, Objective(LossConfig(), obs), cfg)
    assert history[-1].lr == pytest.approx(1e-12 * 0.9**4)


def test_geometry_training_moves_centers():
    start, objective, _ = toy_problem()
    start = start.copy()
    start.centers = start.centers + 0.05
    cfg = TrainConfig(mode="fullbatch", epochs=3, lr=1e-3, trainable=("weights", "centers"))
    field, _ = run_training(start, objective, cfg)
    assert not np.array_equal(field.centers, start.centers)
    assert np.array_equal(field.radii, start.radii)


def test_nan_observations_diverge():
    start, objective, _ = toy_problem()
    start.weights[0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        run_training(start, objective, TrainConfig(epochs=1))


def test_history_csv(tmp_path):
    start, objective, _ = toy_problem()
    _, history = run_training(start, objective, TrainConfig(epochs=2, batch_size=5))
    path = tmp_path / "h.csv"
    write_history_csv(history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,lr,obs,div,bou,reg,con,total"
    assert len(lines) == 4


def test_first_gradient_is_fd_consistent():
    start, objective, _ = toy_problem()
    rep = objective.evaluate(start, geometry=False)
    step = 1e-7
    w = start.weights
    fd = np.zeros_like(w)
    for i in np.ndindex(w.shape):
        keep = w[i]
        w[i] = keep + step
        hi = objective.evaluate(start, geometry=False).total
        w[i] = keep - step
        lo = objective.evaluate(start, geometry=False).total
        w[i] = keep
        fd[i] = (hi - lo) / (2 * step)
    np.testing.assert_allclose(rep.grad.weights, fd, rtol=1e-5)


def test_invalid_config():
    with pytest.raises(ValueError):
        TrainConfig(mode="sgd")
    with pytest.raises(ValueError):
        TrainConfig(trainable=("centers",))
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
