"""
Helper code shared between tests.
"""
import numpy as np
from click.testing import CliRunner

from trajectory_prediction.cli import entry_point
from trajectory_prediction.data_pipeline import NeighborHistory, RawRecord, TrajectorySample
from trajectory_prediction.model import ModelConfig
from trajectory_prediction.selfcheck import TINY_MODEL

EXIT_CODE_SUCCESS = 0
EXIT_CODE_FAILURE = 1
EXIT_CODE_BAD_CONFIG = 2

TEST_CONFIG_PATH = 'test_config.yml'

# Small enough for a full synth -> preprocess -> train -> evaluate run in a few seconds
FAKE_CONFIG_FILE = """
seed: 5
out: test_output
synth:
    n_vehicles: 10
    n_lanes: 3
    duration_frames: 100
    speed_range: [20.0, 26.0]
    road_length: 120.0
data:
    history_steps: 15
    future_steps: 5
    downsample_factor: 2
model:
    embed_dim: 4
    hidden_dim: 8
    ffn_dim: 16
    heads: 2
    decoder_hidden: 8
train:
    epochs: 2
    batch_size: 32
evaluation:
    predictors:
        - name: constant_velocity
          tag: physics
"""


def tiny_config(**overrides):
    """
    Tiny ModelConfig used by the gradient and training tests.
    """
    return ModelConfig(**{**TINY_MODEL, **overrides})


def make_sample(history, future=None, neighbors=(), vehicle_id=1, anchor_frame=100, channels=3, cells=13):
    """
    Build a TrajectorySample by hand.

    Args:
        history: (T, 2) positions
        future: (F, 2) positions, zeros when omitted
        neighbors: iterable of (channel, cell, (T, 2) history)
    """
    history = np.asarray(history, dtype=float)
    neighbor_histories = tuple(
        NeighborHistory(channel, cell, np.asarray(positions, dtype=float))
        for channel, cell, positions in sorted(neighbors, key=lambda n: (n[0], n[1]))
    )
    mask = np.zeros((channels, cells), dtype=np.uint8)
    for neighbor in neighbor_histories:
        mask[neighbor.channel, neighbor.cell] = 1
    return TrajectorySample(
        target_history=history,
        neighbor_histories=neighbor_histories,
        mask=mask,
        future=np.zeros((5, 2)) if future is None else np.asarray(future, dtype=float),
        vehicle_id=vehicle_id,
        anchor_frame=anchor_frame,
    )


def straight_track(vehicle_id, lane, y0, speed, frames, x=1.85, first_frame=1, dataset_id=1):
    """
    Records of a vehicle driving straight at constant speed (m/s) at 10 Hz.
    """
    return [
        RawRecord(dataset_id, vehicle_id, first_frame + t, x, y0 + speed * 0.1 * t, lane)
        for t in range(frames)
    ]


def call_script(args_list):
    """
    Call the trajectory_prediction script with the given params.

    Args:
        args_list: Arguments to pass to the script.

    Returns:
        click.testing.Result: Result from the `CliRunner.invoke()` call.
    """
    runner = CliRunner()
    result = runner.invoke(
        entry_point,
        args_list,
        # catch_exceptions=False  # Uncomment this if you need more information on an exception in a test
    )
    print(result)
    print(result.output)
    return result


def call_script_isolated(commands, test_filesystem_cb=None, config_text=FAKE_CONFIG_FILE):
    """
    Run one or more trajectory_prediction commands inside a temporary directory holding a test config.

    Args:
        commands: A list of argument lists, run in order; stops at the first non-zero exit code
        test_filesystem_cb: Callback function, called after the commands ran, before the temp filesystem is cleared
        config_text: Raw text written to test_config.yml before the commands are called

    Returns:
        click.testing.Result: Result of the last command run.
    """
    runner = CliRunner()
    result = None
    with runner.isolated_filesystem():
        with open(TEST_CONFIG_PATH, 'w') as f:
            f.write(config_text)

        for args_list in commands:
            result = runner.invoke(
                entry_point,
                args_list,
                # catch_exceptions=False
            )
            print(result)
            print(result.output)
            if result.exit_code != EXIT_CODE_SUCCESS:
                break

        if test_filesystem_cb:
            test_filesystem_cb()

    return result
