import math

import numpy as np
import pytest

from dozerformer.data import synth_series
from dozerformer.errors import TrainingDivergedError
from dozerformer.masks import SparsityParams
from dozerformer.model import DozerformerConfig
from dozerformer.tensor import Tensor
from dozerformer.train import (
    MetricsReport,
    OptimizerState,
    adam_step,
    cosine_lr,
    forecast_errors,
    read_metrics,
    train,
    write_metrics,
)


def test_adam_zero_gradient_is_noop():
    params = {"a": Tensor([1.0, -2.0], requires_grad=True), "b": Tensor([[3.0]], requires_grad=True)}
    for t in params.values():
        t.grad = np.zeros(t.shape)
    state = OptimizerState.for_params(params, lr=0.1)
    adam_step(params, state)
    assert params["a"].data.tolist() == [1.0, -2.0] and params["b"].data.tolist() == [[3.0]]
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    # bias-corrected m/sqrt(v) = g/|g| at step 1
    p = {"w": Tensor([0.5], requires_grad=True)}
    p["w"].grad = np.array([3.7])
    adam_step(p, OptimizerState.for_params(p, lr=0.01))
    assert abs((0.5 - p["w"].data[0]) - 0.01) < 1e-9


def test_adam_default_hyperparameters():
    state = OptimizerState.for_params({"w": Tensor([0.0])})
    assert state.betas == (0.9, 0.99)
    assert state.eps == 1e-8


def test_adam_rejects_non_finite_gradient():
    p = {"good": Tensor([1.0], requires_grad=True), "bad": Tensor([1.0], requires_grad=True)}
    p["good"].grad = np.array([1.0])
    p["bad"].grad = np.array([np.nan])
    with pytest.raises(TrainingDivergedError, match="bad"):
        adam_step(p, OptimizerState.for_params(p))


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1e-3, 1e-5) == 1e-3
    assert math.isclose(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, rel_tol=1e-12)
    assert math.isclose(cosine_lr(50, 100, 1e-3, 1e-5), (1e-3 + 1e-5) / 2, rel_tol=1e-12)
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 1.0)


def test_metrics_hand_case():
    mse, mae, mase = forecast_errors(np.array([4.0, 4.0]), np.array([3.0, 5.0]), np.array([1.0, 2.0, 4.0]))
    assert (mse, mae) == (1.0, 1.0)
    assert abs(mase - 2 / 3) <= 1e-12


def test_metrics_perfect_prediction():
    y = np.arange(6.0).reshape(3, 2)
    assert forecast_errors(y, y, np.array([[0.0, 1.0], [1.0, 3.0]])) == (0.0, 0.0, 0.0)


def test_mase_undefined_for_flat_training_series():
    mse, mae, mase = forecast_errors(np.array([1.0]), np.array([2.0]), np.array([5.0, 5.0, 5.0]))
    assert (mse, mae) == (1.0, 1.0) and math.isnan(mase)


def test_mase_scale_invariant(rng):
    pred, target, hist = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(20, 3))
    base = forecast_errors(pred, target, hist)[2]
    for k in (-3.0, 0.01, 1e4):
        assert abs(forecast_errors(k * pred, k * target, k * hist)[2] - base) <= 1e-12


def test_metrics_invariant_to_window_order(rng):
    pred, target = rng.normal(size=(8, 4, 2)), rng.normal(size=(8, 4, 2))
    hist = rng.normal(size=(30, 2))
    perm = rng.permutation(8)
    a = forecast_errors(pred, target, hist)
    b = forecast_errors(pred[perm], target[perm], hist)
    np.testing.assert_allclose(a, b, rtol=1e-13)


def test_constant_predictor_mse_is_target_variance(rng):
    target = rng.normal(loc=0.0, scale=1.0, size=(200, 8, 1))
    pred = np.full_like(target, target.mean())
    mse = forecast_errors(pred, target, target[:, 0, :])[0]
    assert abs(mse - target.var()) <= 1e-12


def test_metrics_file_round_trip(tmp_path):
    reports = {"val": MetricsReport(0.1, 0.2, 0.3, 0.5, 0.6, 100, 2000, 1.5),
               "test": MetricsReport(1 / 3, 2 / 7, math.nan, 1.0, 1.0, 7, 9)}
    write_metrics(tmp_path / "m.txt", reports)
    back = read_metrics(tmp_path / "m.txt")
    assert back["val"].mse == 0.1 and back["test"].mse == 1 / 3 and math.isnan(back["test"].mase)
    assert back["val"].params == 100
    assert "wall_seconds" not in (tmp_path / "m.txt").read_text()
    assert (tmp_path / "m.json").exists()


SMALL = DozerformerConfig(I=48, L=24, O=24, D=2, p=12, c=2, heads=2, dropout=0.0, kernels=(13, 17),
                          sparsity=SparsityParams(3, 2, 1))


def test_zero_epochs_returns_initial_params():
    ds = synth_series(800, 2, 24, 0.0, 0.05, seed=0)
    result = train(SMALL, ds, epochs=0, batch=16, seed=3)
    assert result.steps == 0 and result.history == []
    from dozerformer.model import init_params
    fresh = init_params(SMALL, np.random.default_rng(3))
    for k, v in fresh.items():
        assert np.array_equal(v.data, result.model.params[k].data)
    assert {"train", "val", "test"} <= set(result.reports)
    assert result.reports["val"].params == result.model.num_params()


def test_training_loss_decreases_on_noiseless_sine():
    ds = synth_series(600, 2, 24, 0.0, 0.0, seed=0)
    result = train(SMALL, ds, epochs=10, batch=64, seed=1, lr=3e-3)
    losses = [r.train_mse for r in result.history]
    assert len(losses) == 10
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_training_is_deterministic():
    ds = synth_series(400, 2, 24, 0.01, 0.1, seed=0)
    a = train(SMALL.replace(dropout=0.1), ds, epochs=2, batch=32, seed=5)
    b = train(SMALL.replace(dropout=0.1), ds, epochs=2, batch=32, seed=5)
    for split in a.reports:
        assert a.reports[split].as_dict(False) == b.reports[split].as_dict(False)
    for k in a.model.params:
        assert np.array_equal(a.model.params[k].data, b.model.params[k].data)


def test_best_validation_parameters_returned():
    ds = synth_series(800, 2, 24, 0.0, 0.1, seed=0)
    result = train(SMALL, ds, epochs=3, batch=32, seed=2)
    vals = [r.val_mse for r in result.history]
    assert result.best_epoch == 1 + vals.index(min(vals))
    assert abs(result.reports["val"].mse - min(vals)) <= 1e-12
