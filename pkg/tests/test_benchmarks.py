"""
Small end to end benchmarks: train, checkpoint and evaluate through the predictor plugin.
"""
import os
import statistics

import numpy as np

from trajectory_prediction.data_pipeline import (
    DatasetSplit,
    NeighborHistory,
    TrajectorySample,
    build_samples,
    normalize_records,
    split_dataset
)
from trajectory_prediction.evaluation import evaluate
from trajectory_prediction.extensions.model import CheckpointPredictor
from trajectory_prediction.extensions.physics import ConstantVelocityPredictor
from trajectory_prediction.helpers import VerboseEcho
from trajectory_prediction.model import ModelConfig
from trajectory_prediction.synth_data import SynthConfig, generate
from trajectory_prediction.training import TrainConfig, train
from tests.helpers import tiny_config


def _train_and_evaluate(dataset, test_samples, model_config, train_config, run_dir):
    os.makedirs(run_dir)
    train(dataset, model_config, train_config, run_dir=run_dir)
    predictor = CheckpointPredictor({'checkpoint': os.path.join(run_dir, 'best.npz')}, VerboseEcho())
    report, _ = evaluate(predictor, test_samples)
    return report


def _lead_vehicle_samples(count, seed, config):
    """
    Every other target has a stopped vehicle right ahead in its lane and stops; the others keep their speed.

    Target histories look the same either way, only the neighbor tells them apart.
    """
    rng = np.random.default_rng(seed)
    ahead = (config.grid_channels // 2, config.grid_cells // 2 + 1)
    steps = np.arange(-(config.history_steps - 1), config.horizon + 1)[:, None]
    samples = []
    for index in range(count):
        speed = rng.uniform(1.0, 3.0)
        track = steps * np.array([0.0, speed])
        mask = np.zeros((config.grid_channels, config.grid_cells), dtype=np.uint8)
        if index % 2:
            leader = np.tile([0.0, speed + 2.0], (config.history_steps, 1))
            neighbors = (NeighborHistory(ahead[0], ahead[1], leader),)
            mask[ahead] = 1
            future = np.zeros((config.horizon, 2))
        else:
            neighbors = ()
            future = track[config.history_steps:]
        samples.append(TrajectorySample(
            track[:config.history_steps], neighbors, mask, future, index + 1, config.history_steps
        ))
    return samples


def test_full_model_beats_naive_lstm_when_neighbors_matter(tmp_path):
    train_samples = _lead_vehicle_samples(64, seed=1, config=tiny_config())
    test_samples = _lead_vehicle_samples(32, seed=2, config=tiny_config())

    mean_rmse = {'full': [], 'naive_lstm': []}
    for seed in range(3):
        for variant, results in mean_rmse.items():
            report = _train_and_evaluate(
                DatasetSplit(train=train_samples, validation=[]),
                test_samples,
                tiny_config(variant=variant),
                TrainConfig(epochs=200, batch_size=16, lr=0.01, seed=seed),
                str(tmp_path / f'{variant}-{seed}'),
            )
            assert report.model_tag == variant
            results.append(report.mean)

    assert statistics.median(mean_rmse['full']) <= statistics.median(mean_rmse['naive_lstm'])


def test_error_grows_with_prediction_step_on_curved_traffic(tmp_path):
    records = generate(SynthConfig(
        n_vehicles=40, duration_frames=400, speed_range=(18.0, 30.0), curvature_amplitude=1.5,
        curvature_period=80, seed=11,
    ))
    split = split_dataset(build_samples(normalize_records(records)), ratios=(0.5, 0.1, 0.4), seed=11)
    assert len(split.test) >= 2000

    model_config = ModelConfig(embed_dim=4, hidden_dim=8, ffn_dim=16, heads=2, decoder_hidden=8)
    dataset = DatasetSplit(train=split.train[::10], validation=split.validation[::10])
    model_report = _train_and_evaluate(
        dataset, split.test, model_config, TrainConfig(epochs=3, batch_size=32, lr=0.01, seed=11),
        str(tmp_path / 'run'),
    )
    physics_report, _ = evaluate(ConstantVelocityPredictor({}, VerboseEcho()), split.test)

    for report in (model_report, physics_report):
        assert report.sample_count == len(split.test)
        assert all(later >= earlier for earlier, later in zip(report.per_step, report.per_step[1:]))
