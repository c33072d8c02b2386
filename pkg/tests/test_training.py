"""
Tests for trajectory_prediction/training.py
"""
import json
import os
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from trajectory_prediction.data_pipeline import DatasetSplit, TrajectorySample
from trajectory_prediction.exceptions import ConfigurationException, DivergenceError, NumericError, ShapeError
from trajectory_prediction.model import load_checkpoint
from trajectory_prediction.neural_core import ParamStore
from trajectory_prediction.selfcheck import random_samples
from trajectory_prediction.training import (
    OptimizerState,
    TrainConfig,
    adam_step,
    dataset_loss,
    train,
    trajectory_loss,
    trajectory_loss_grad
)
from tests.helpers import tiny_config


def _dataset(train_count=12, validation_count=4, seed=0):
    samples = random_samples(np.random.default_rng(seed), tiny_config(), train_count + validation_count)
    return DatasetSplit(train=samples[:train_count], validation=samples[train_count:])


def _scalar_store(value=1.0):
    params = ParamStore()
    params.add('p', np.array([value]))
    return params


def test_loss_zero_residual():
    truth = np.random.default_rng(0).normal(size=(4, 5, 2))
    assert trajectory_loss(truth.copy(), truth) == 0.0


def test_loss_single_point():
    assert trajectory_loss(np.ones((1, 1, 2)), np.zeros((1, 1, 2))) == 2.0


def test_loss_is_mean_over_batch():
    pred = np.array([[[1.0, 1.0]], [[2.0, 0.0]]])
    assert trajectory_loss(pred, np.zeros((2, 1, 2))) == 3.0


def test_loss_sums_over_steps():
    assert trajectory_loss(np.ones((1, 5, 2)), np.zeros((1, 5, 2))) == 10.0


def test_loss_is_permutation_invariant():
    rng = np.random.default_rng(1)
    pred = rng.normal(size=(6, 5, 2))
    truth = rng.normal(size=(6, 5, 2))
    order = rng.permutation(6)
    assert trajectory_loss(pred[order], truth[order]) == pytest.approx(trajectory_loss(pred, truth), rel=1e-14)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        trajectory_loss(np.zeros((1, 5, 2)), np.zeros((1, 4, 2)))


def test_loss_non_finite():
    pred = np.zeros((1, 5, 2))
    pred[0, 2, 1] = np.nan
    with pytest.raises(NumericError):
        trajectory_loss(pred, np.zeros((1, 5, 2)))


def test_loss_grad():
    pred = np.array([[[1.0, -2.0]], [[0.5, 0.0]]])
    np.testing.assert_allclose(trajectory_loss_grad(pred, np.zeros((2, 1, 2))), pred)


def test_adam_zero_gradient_is_no_op():
    params = _scalar_store()
    state = OptimizerState.create(params)
    adam_step(params, {'p': np.zeros(1)}, state)
    assert params['p'][0] == 1.0
    assert state.step == 1


def test_adam_first_step():
    params = _scalar_store()
    state = OptimizerState.create(params, lr=0.001)
    adam_step(params, {'p': np.ones(1)}, state)
    assert params['p'][0] == pytest.approx(1.0 - 0.001 / (1.0 + 1e-8), abs=1e-15)


def test_adam_constant_gradient_steps():
    params = _scalar_store()
    state = OptimizerState.create(params, lr=0.001)
    previous = params['p'][0]
    for _ in range(2):
        adam_step(params, {'p': np.ones(1)}, state)
        assert abs((previous - params['p'][0]) - 0.001) < 1e-6
        previous = params['p'][0]
    assert state.step == 2


def test_adam_non_finite_gradient_names_parameter():
    params = _scalar_store()
    params.add('decoder.head.W', np.zeros((2, 2)))
    state = OptimizerState.create(params)
    grads = {'p': np.ones(1), 'decoder.head.W': np.array([[0.0, np.inf], [0.0, 0.0]])}
    with pytest.raises(NumericError) as exception:
        adam_step(params, grads, state)
    assert 'decoder.head.W' in str(exception.value)
    assert params['p'][0] == 1.0
    assert state.step == 0


@pytest.mark.parametrize("overrides", [
    {'epochs': 0},
    {'batch_size': 0},
    {'lr': 0.0},
    {'beta1': 1.0},
    {'dtype': 'float16'},
])
def test_train_config_validation(overrides):
    with pytest.raises(ConfigurationException):
        TrainConfig(**overrides)


def test_train_is_deterministic():
    dataset = _dataset()
    train_config = TrainConfig(epochs=3, batch_size=5, seed=4)
    first = train(dataset, tiny_config(), train_config)
    second = train(dataset, tiny_config(), train_config)
    assert first.history == second.history
    for name in first.last_params:
        assert first.last_params[name].tobytes() == second.last_params[name].tobytes()


def test_train_single_precision(tmp_path):
    dataset = _dataset()
    train_config = TrainConfig(epochs=3, batch_size=5, seed=4)
    double = train(dataset, tiny_config(), train_config)
    single = train(dataset, tiny_config(), replace(train_config, dtype='float32'), run_dir=str(tmp_path))

    assert all(single.last_params[name].dtype == np.float32 for name in single.last_params)
    for double_entry, single_entry in zip(double.history, single.history):
        assert single_entry.train_loss == pytest.approx(double_entry.train_loss, rel=2e-2)
        assert single_entry.val_loss == pytest.approx(double_entry.val_loss, rel=2e-2)

    checkpoint = load_checkpoint(os.path.join(str(tmp_path), 'best.npz'))
    assert all(checkpoint.params[name].dtype == np.float32 for name in checkpoint.params)


def test_train_seed_changes_result():
    dataset = _dataset()
    first = train(dataset, tiny_config(), TrainConfig(epochs=1, batch_size=5, seed=1))
    second = train(dataset, tiny_config(), TrainConfig(epochs=1, batch_size=5, seed=2))
    assert first.history != second.history


def test_train_retains_best_validation_epoch():
    result = train(_dataset(), tiny_config(), TrainConfig(epochs=6, batch_size=4, lr=0.01))
    val_losses = [entry.val_loss for entry in result.history]
    assert result.best_epoch == 1 + int(np.argmin(val_losses))
    assert dataset_loss(_dataset().validation, result.best_params, tiny_config()) == pytest.approx(min(val_losses))


def test_train_empty_validation_keeps_last_params():
    dataset = DatasetSplit(train=_dataset().train, validation=[])
    result = train(dataset, tiny_config(), TrainConfig(epochs=2, batch_size=5))
    assert result.best_epoch == 2
    assert all(entry.val_loss is None for entry in result.history)
    for name in result.last_params:
        np.testing.assert_array_equal(result.best_params[name], result.last_params[name])


def test_train_empty_training_split():
    with pytest.raises(ShapeError):
        train(DatasetSplit(train=[], validation=[]), tiny_config(), TrainConfig(epochs=1))


def test_train_writes_run_dir(tmp_path):
    run_dir = str(tmp_path)
    train(_dataset(), tiny_config(), TrainConfig(epochs=3, batch_size=5), run_dir=run_dir, data_config_hash='feed')

    losses = pd.read_csv(os.path.join(run_dir, 'losses.csv'))
    assert list(losses.columns) == ['epoch', 'train_loss', 'val_loss']
    assert list(losses['epoch']) == [1, 2, 3]
    assert losses['val_loss'].notna().all()

    best = load_checkpoint(os.path.join(run_dir, 'best.npz'))
    last = load_checkpoint(os.path.join(run_dir, 'last.npz'))
    assert best.data_config_hash == last.data_config_hash == 'feed'
    assert last.metadata['epoch'] == 3
    assert best.config == tiny_config()


def test_train_empty_validation_leaves_val_loss_blank(tmp_path):
    run_dir = str(tmp_path)
    dataset = DatasetSplit(train=_dataset().train, validation=[])
    train(dataset, tiny_config(), TrainConfig(epochs=1, batch_size=5), run_dir=run_dir)
    with open(os.path.join(run_dir, 'losses.csv')) as losses_file:
        lines = losses_file.read().splitlines()
    assert lines[0] == 'epoch,train_loss,val_loss'
    assert lines[1].endswith(',')


def test_train_divergence_persists_diagnostics(tmp_path):
    run_dir = str(tmp_path)
    samples = _dataset().train
    broken = samples[3]
    future = broken.future.copy()
    future[0, 0] = np.nan
    samples[3] = TrajectorySample(broken.target_history, broken.neighbor_histories, broken.mask, future,
                                  broken.vehicle_id, broken.anchor_frame)

    with pytest.raises(DivergenceError):
        train(DatasetSplit(train=samples, validation=[]), tiny_config(), TrainConfig(epochs=2, shuffle=False,
              batch_size=2), run_dir=run_dir)

    with open(os.path.join(run_dir, 'divergence.json')) as diagnostics_file:
        diagnostics = json.load(diagnostics_file)
    assert diagnostics['epoch'] == 1
    assert diagnostics['batch'] == 1
    checkpoint = load_checkpoint(os.path.join(run_dir, 'last.npz'))
    assert all(np.all(np.isfinite(checkpoint.params[name])) for name in checkpoint.params)


def _straight_samples(count, seed):
    """
    Straight tracks along y whose future continues the history at each sample's own speed.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for index in range(count):
        speed = rng.uniform(1.0, 3.0)
        steps = np.arange(-2, 6)[:, None] * np.array([0.0, speed])
        samples.append(TrajectorySample(steps[:3], (), np.zeros((3, 3), dtype=np.uint8), steps[3:], index + 1, 3))
    return samples


def test_overfit_small_dataset():
    samples = _straight_samples(32, seed=11)
    result = train(
        DatasetSplit(train=samples, validation=[]),
        tiny_config(),
        TrainConfig(epochs=500, batch_size=8, lr=0.01, seed=0),
    )
    losses = [entry.train_loss for entry in result.history]
    assert losses[-1] < 0.01 * losses[0]


def test_overfit_loss_keeps_decreasing_at_default_learning_rate():
    samples = _straight_samples(32, seed=11)
    train_config = TrainConfig(epochs=500, batch_size=32, seed=0)
    assert train_config.lr == 0.001
    result = train(DatasetSplit(train=samples, validation=[]), tiny_config(), train_config)

    losses = [entry.train_loss for entry in result.history]
    rises = sum(later >= earlier for earlier, later in zip(losses[5:], losses[6:]))
    assert rises <= 0.05 * (len(losses) - 6)
    assert losses[-1] < losses[5]
