"""
Deterministic synthetic highway traffic in the raw record format.

Every vehicle drives for the whole duration at a constant base speed in its lane, starting at a seeded offset.
Optional behaviours, all off by default: lane changes, a lateral sinusoidal wobble, and braking events that
propagate to followers in the same lane.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from trajectory_prediction.data_pipeline import FRAME_SECONDS, MAX_LANE, RawRecord
from trajectory_prediction.exceptions import ConfigurationException

LANE_CHANGE_FRAMES = 30


@dataclass(frozen=True)
class SynthConfig:
    """
    Generator settings. Lengths are in meters, speeds in m/s, durations in 10 Hz frames.
    """

    n_vehicles: int = 60
    n_lanes: int = 3
    duration_frames: int = 600
    speed_range: tuple = (20.0, 30.0)
    road_length: float = 500.0
    lane_width: float = 3.7
    lane_change_prob: float = 0.0
    curvature_amplitude: float = 0.0
    curvature_period: int = 100
    braking_prob: float = 0.0
    braking_factor: float = 0.5
    braking_frames: int = 30
    follow_gap: float = 40.0
    reaction_frames: int = 10
    seed: int = 0
    dataset_id: int = 1

    def __post_init__(self):
        """
        Validate the settings.

        Raises:
            ConfigurationException on any invalid value
        """
        object.__setattr__(self, 'speed_range', tuple(float(s) for s in self.speed_range))
        if not 1 <= self.n_lanes <= MAX_LANE:
            raise ConfigurationException(
                f'synth.n_lanes must be between 1 and {MAX_LANE} (lanes above {MAX_LANE} are capped), '
                f'not {self.n_lanes}.'
            )
        if self.n_vehicles < 1 or self.duration_frames < 1:
            raise ConfigurationException('synth.n_vehicles and synth.duration_frames must be at least 1.')
        low, high = self.speed_range if len(self.speed_range) == 2 else (0.0, -1.0)
        if not 0 < low <= high:
            raise ConfigurationException(
                f'synth.speed_range must be a positive [low, high] interval, not {list(self.speed_range)}.'
            )
        for name in ('lane_change_prob', 'braking_prob', 'braking_factor'):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationException(f'synth.{name} must be in [0, 1], not {getattr(self, name)}.')
        if self.curvature_period < 1 or self.braking_frames < 0 or self.reaction_frames < 0:
            raise ConfigurationException(
                'synth.curvature_period must be positive; braking_frames and reaction_frames non-negative.'
            )

    def to_dict(self):
        values = asdict(self)
        values['speed_range'] = list(self.speed_range)
        return values


def _lane_center(lane, lane_width):
    return (lane - 0.5) * lane_width


def _followers(y, lanes, leaders, follow_gap):
    """
    Indices of vehicles in the same lane as one of ``leaders`` and at most ``follow_gap`` behind it.
    """
    gap = y[leaders][:, None] - y[None, :]
    same_lane = lanes[leaders][:, None] == lanes[None, :]
    return np.flatnonzero(np.any(same_lane & (gap > 0) & (gap <= follow_gap), axis=0))


def generate(config):
    """
    Generate records for every vehicle and frame.

    Returns:
        List of RawRecord sorted by (vehicle_id, frame_id), frames numbered from 1
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_vehicles
    frames = config.duration_frames

    lanes = rng.integers(1, config.n_lanes + 1, size=n)
    y = rng.uniform(0.0, config.road_length, size=n)
    base_speed = rng.uniform(config.speed_range[0], config.speed_range[1], size=n)
    phase = rng.uniform(0.0, 2 * math.pi, size=n)

    change_from = _lane_center(lanes, config.lane_width).astype(float)
    change_start = np.full(n, -LANE_CHANGE_FRAMES)
    brake_until = np.full(n, -1)
    react_at = np.full(n, -1)

    xs = np.empty((frames, n))
    ys = np.empty((frames, n))
    lane_ids = np.empty((frames, n), dtype=int)
    for t in range(frames):
        progress = np.minimum(1.0, (t - change_start) / LANE_CHANGE_FRAMES)
        center = change_from + (_lane_center(lanes, config.lane_width) - change_from) * progress
        wobble = config.curvature_amplitude * np.sin(2 * math.pi * t / config.curvature_period + phase)
        xs[t] = center + wobble
        ys[t] = y
        lane_ids[t] = lanes

        brake_draw = rng.random(n)
        change_draw = rng.random(n)
        direction_draw = rng.random(n)

        braking = brake_until >= t
        starting = (~braking & (brake_draw < config.braking_prob)) | (react_at == t)
        if starting.any():
            brake_until[starting] = t + config.braking_frames
            braking = brake_until >= t
            followers = _followers(y, lanes, np.flatnonzero(starting), config.follow_gap)
            followers = followers[~braking[followers] & (react_at[followers] < t)]
            react_at[followers] = t + config.reaction_frames

        y = y + base_speed * np.where(braking, config.braking_factor, 1.0) * FRAME_SECONDS

        idle = (t - change_start) >= LANE_CHANGE_FRAMES
        target = lanes + np.where(direction_draw < 0.5, -1, 1)
        changing = idle & (change_draw < config.lane_change_prob) & (target >= 1) & (target <= config.n_lanes)
        if changing.any():
            change_from[changing] = xs[t, changing] - wobble[changing]
            change_start[changing] = t + 1
            lanes = np.where(changing, target, lanes)

    records = []
    for v in range(n):
        for t in range(frames):
            records.append(RawRecord(
                dataset_id=config.dataset_id,
                vehicle_id=v + 1,
                frame_id=t + 1,
                local_x=float(xs[t, v]),
                local_y=float(ys[t, v]),
                lane_id=int(lane_ids[t, v]),
            ))
    return records
