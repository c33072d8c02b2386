"""
Tests for trajectory_prediction/model.py
"""
import numpy as np
import pytest

from trajectory_prediction.data_pipeline import NeighborHistory, TrajectorySample
from trajectory_prediction.exceptions import ConfigurationException, IntegrityError, NumericError, ShapeError
from trajectory_prediction.model import (
    ModelConfig,
    check_params,
    collate,
    encode_neighbors,
    encode_target,
    forward,
    load_checkpoint,
    save_checkpoint
)
from trajectory_prediction.neural_core import init_params
from trajectory_prediction.selfcheck import random_samples
from tests.helpers import tiny_config


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def params(config):
    return init_params(config, seed=0)


def _samples(config, count=6, seed=1):
    return random_samples(np.random.default_rng(seed), config, count)


def test_default_config_dimensions():
    config = ModelConfig()
    assert config.social_dim == 3 * 13 * 64
    assert config.combined_dim == 3 * 13 * 64 + 64
    assert ModelConfig(variant='naive_lstm').combined_dim == 64


@pytest.mark.parametrize("overrides", [
    {'hidden_dim': 10, 'heads': 4},
    {'variant': 'social_pooling'},
    {'decoder_input': 'first_step'},
    {'horizon': 0},
])
def test_config_validation(overrides):
    with pytest.raises(ConfigurationException):
        tiny_config(**overrides)


def test_forward_shape(config, params):
    predictions = forward(_samples(config), params, config)
    assert predictions.shape == (6, 5, 2)
    assert np.all(np.isfinite(predictions))


def test_forward_is_deterministic(config, params):
    samples = _samples(config)
    np.testing.assert_array_equal(forward(samples, params, config), forward(samples, params, config))


def test_batching_is_neutral(config, params):
    samples = _samples(config)
    batched = forward(samples, params, config)
    for index, sample in enumerate(samples):
        np.testing.assert_allclose(forward([sample], params, config)[0], batched[index], atol=1e-12)


def test_neighbor_order_does_not_matter(config, params):
    rng = np.random.default_rng(7)
    neighbors = (
        NeighborHistory(0, 0, rng.normal(size=(3, 2))),
        NeighborHistory(0, 2, rng.normal(size=(3, 2))),
        NeighborHistory(2, 1, rng.normal(size=(3, 2))),
    )
    mask = np.zeros((3, 3), dtype=np.uint8)
    for neighbor in neighbors:
        mask[neighbor.channel, neighbor.cell] = 1
    history = rng.normal(size=(3, 2))

    def sample(order):
        return TrajectorySample(history, tuple(neighbors[i] for i in order), mask, np.zeros((5, 2)), 1, 10)

    np.testing.assert_array_equal(
        forward([sample((0, 1, 2))], params, config),
        forward([sample((2, 0, 1))], params, config),
    )


def test_neighbor_stack_is_shared(config, params):
    history = np.random.default_rng(3).normal(size=(3, 2))
    mask = np.zeros((3, 3), dtype=np.uint8)
    mask[0, 0] = mask[2, 2] = 1
    social = encode_neighbors([NeighborHistory(0, 0, history), NeighborHistory(2, 2, history)], mask, params, config)
    assert social.shape == (3, 3, 8)
    np.testing.assert_array_equal(social[0, 0], social[2, 2])
    assert not social[1].any()


def test_target_and_neighbor_stacks_differ(config, params):
    history = np.random.default_rng(3).normal(size=(3, 2))
    mask = np.zeros((3, 3), dtype=np.uint8)
    mask[0, 0] = 1
    social = encode_neighbors([NeighborHistory(0, 0, history)], mask, params, config)
    target = encode_target(history, params, config)
    assert target.shape == (8,)
    assert not np.allclose(social[0, 0], target)


def test_no_neighbors_gives_zero_social_encoding(config, params):
    social = encode_neighbors([], np.zeros((3, 3), dtype=np.uint8), params, config)
    assert social.shape == (3, 3, 8)
    assert not social.any()


def test_encode_neighbors_mask_mismatch(config, params):
    mask = np.zeros((3, 3), dtype=np.uint8)
    mask[0, 1] = 1
    with pytest.raises(IntegrityError):
        encode_neighbors([NeighborHistory(0, 0, np.zeros((3, 2)))], mask, params, config)


def test_naive_variant_ignores_neighbors():
    config = tiny_config(variant='naive_lstm')
    params = init_params(config, seed=0)
    samples = _samples(config)
    lonely = [
        TrajectorySample(s.target_history, (), np.zeros((3, 3), dtype=np.uint8), s.future, s.vehicle_id, s.anchor_frame)
        for s in samples
    ]
    np.testing.assert_array_equal(forward(samples, params, config), forward(lonely, params, config))


def test_full_variant_uses_neighbors(config, params):
    samples = [s for s in _samples(config, count=20) if s.neighbor_histories]
    lonely = [
        TrajectorySample(s.target_history, (), np.zeros((3, 3), dtype=np.uint8), s.future, s.vehicle_id, s.anchor_frame)
        for s in samples
    ]
    assert not np.allclose(forward(samples, params, config), forward(lonely, params, config))


def test_collate_wrong_history_length(config, params):
    sample = TrajectorySample(np.zeros((4, 2)), (), np.zeros((3, 3), dtype=np.uint8), np.zeros((5, 2)), 1, 10)
    with pytest.raises(ShapeError):
        forward([sample], params, config)


def test_collate_empty(config):
    with pytest.raises(ShapeError):
        collate([], config)


def test_collate_mask_mismatch(config):
    mask = np.zeros((3, 3), dtype=np.uint8)
    mask[2, 2] = 1
    sample = TrajectorySample(np.zeros((3, 2)), (), mask, np.zeros((5, 2)), 1, 10)
    with pytest.raises(IntegrityError):
        collate([sample], config)


def test_collate_orders_neighbor_rows(config):
    first = NeighborHistory(0, 2, np.full((3, 2), 1.0))
    second = NeighborHistory(2, 0, np.full((3, 2), 2.0))
    mask = np.zeros((3, 3), dtype=np.uint8)
    mask[0, 2] = mask[2, 0] = 1
    batch = collate([
        TrajectorySample(np.zeros((3, 2)), (second, first), mask, np.zeros((5, 2)), 1, 10),
        TrajectorySample(np.zeros((3, 2)), (), None, np.zeros((5, 2)), 2, 10),
    ], config)
    assert len(batch) == 2
    assert batch.neighbor_history.shape == (2, 3, 2)
    assert batch.neighbor_history[0, 0, 0] == 1.0
    assert batch.neighbor_history[1, 0, 0] == 2.0
    assert not batch.masks[1].any()


def test_params_must_match_variant(config):
    naive_params = init_params(tiny_config(variant='naive_lstm'), seed=0)
    with pytest.raises(ShapeError) as exception:
        check_params(naive_params, config)
    assert 'missing' in str(exception.value)
    with pytest.raises(ShapeError):
        forward(_samples(config), naive_params, config)


def test_params_wrong_shape(config):
    with pytest.raises(ShapeError) as exception:
        check_params(init_params(tiny_config(hidden_dim=4), seed=0), config)
    assert 'target.lstm.W' in str(exception.value)


def test_non_finite_params(config, params):
    params.values['target.embed.W'][0, 0] = np.nan
    with pytest.raises(NumericError):
        forward(_samples(config), params, config)


def test_checkpoint_round_trip(tmp_path, config, params):
    path = str(tmp_path / 'best.npz')
    save_checkpoint(path, params, config, 'abc123', epoch=3)
    checkpoint = load_checkpoint(path)

    assert checkpoint.config == config
    assert checkpoint.data_config_hash == 'abc123'
    assert checkpoint.metadata == {'epoch': 3}
    samples = _samples(config)
    np.testing.assert_array_equal(
        forward(samples, checkpoint.params, checkpoint.config),
        forward(samples, params, config),
    )
