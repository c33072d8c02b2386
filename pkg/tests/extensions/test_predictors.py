"""
Tests for the predictor extensions
"""
import numpy as np
import pytest

from trajectory_prediction.exceptions import ConfigurationException, ShapeError
from trajectory_prediction.extensions.model import CheckpointPredictor
from trajectory_prediction.extensions.physics import AveragedVelocityPredictor, ConstantVelocityPredictor
from trajectory_prediction.helpers import VerboseEcho
from trajectory_prediction.model import forward, save_checkpoint
from trajectory_prediction.neural_core import init_params
from trajectory_prediction.selfcheck import random_samples
from tests.helpers import make_sample, tiny_config


def _linear_sample(speed=2.0):
    history = np.array([[0.0, speed * t] for t in range(-14, 1)])
    return make_sample(history, future=[[0.0, speed * k] for k in range(1, 6)])


@pytest.fixture
def checkpoint_path(tmp_path):
    config = tiny_config()
    path = str(tmp_path / 'best.npz')
    save_checkpoint(path, init_params(config, seed=0), config, 'hash-1')
    return path


def test_constant_velocity_predictor():
    predictor = ConstantVelocityPredictor({}, VerboseEcho())
    assert predictor.model_tag == 'constant_velocity'
    assert predictor.data_config_hash == ''
    sample = _linear_sample()
    np.testing.assert_allclose(predictor.predict([sample, sample]), [sample.future, sample.future])


def test_constant_velocity_horizon_and_tag():
    predictor = ConstantVelocityPredictor({'tag': 'Physics based model', 'horizon': 3}, VerboseEcho())
    assert predictor.model_tag == 'Physics based model'
    assert predictor.predict([_linear_sample()]).shape == (1, 3, 2)


def test_averaged_velocity_predictor():
    history = np.zeros((15, 2))
    history[-2:, 1] = (1.0, 3.0)
    predictor = AveragedVelocityPredictor({'velocity_window': 2}, VerboseEcho())
    assert predictor.model_tag == 'averaged_velocity'
    np.testing.assert_allclose(predictor.predict([make_sample(history)])[0, 0], [0.0, 4.5])


def test_unknown_option():
    with pytest.raises(ConfigurationException) as exception:
        ConstantVelocityPredictor({'velocity_window': 2}, VerboseEcho())
    assert 'velocity_window' in str(exception.value)


def test_velocity_predictor_short_history():
    sample = make_sample(np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        ConstantVelocityPredictor({}, VerboseEcho()).predict([sample])


def test_checkpoint_predictor(checkpoint_path):
    predictor = CheckpointPredictor({'checkpoint': checkpoint_path, 'batch_size': 2}, VerboseEcho())
    assert predictor.model_tag == 'full'
    assert predictor.data_config_hash == 'hash-1'
    assert predictor.horizon == 5

    samples = random_samples(np.random.default_rng(0), tiny_config(), 5)
    expected = forward(samples, init_params(tiny_config(), seed=0), tiny_config())
    np.testing.assert_allclose(predictor.predict(samples), expected, atol=1e-12)
    assert predictor.predict([]).shape == (0, 5, 2)


def test_checkpoint_predictor_tag(checkpoint_path):
    predictor = CheckpointPredictor({'checkpoint': checkpoint_path, 'tag': 'hybrid'}, VerboseEcho())
    assert predictor.model_tag == 'hybrid'


def test_checkpoint_predictor_needs_checkpoint():
    with pytest.raises(ConfigurationException):
        CheckpointPredictor({}, VerboseEcho())
