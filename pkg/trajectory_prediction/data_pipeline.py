"""
Turn raw highway vehicle records into grid-based trajectory samples.

The pipeline is: ``parse_records`` -> ``normalize_records`` (lane capping) -> ``build_samples`` (downsampling,
relative coordinates, neighbor grid, maneuver metadata) -> ``split_dataset`` -> ``save_samples``.

All positions inside a sample are relative to the target vehicle's position at the anchor frame, so the last row of
``target_history`` is always ``(0, 0)``.
"""
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd

from trajectory_prediction.exceptions import (
    CompatibilityError,
    ConfigurationException,
    InvalidLaneError,
    RecordParseError,
    SplitInfeasibleError,
    WindowUnavailableError
)
from trajectory_prediction.helpers import write_npz

RECORD_COLUMNS = ('dataset_id', 'vehicle_id', 'frame_id', 'local_x', 'local_y', 'lane_id')
INTEGER_COLUMNS = ('dataset_id', 'vehicle_id', 'frame_id', 'lane_id')
UNITS = ('meters', 'feet')
FEET_TO_METERS = 0.3048
MAX_LANE = 6

# Raw NGSIM frames are 10 Hz
FRAME_SECONDS = 0.1

GRID_CHANNELS = 3
GRID_CELLS = 13
GRID_RANGE = 90.0
CELL_LENGTH = 2 * GRID_RANGE / GRID_CELLS
TARGET_CELL = (1, GRID_CELLS // 2)

SAMPLES_SCHEMA_VERSION = 'trajectory-samples/1'


@dataclass(frozen=True)
class RawRecord:
    """
    One vehicle observation, positions in meters once parsed.
    """

    dataset_id: int
    vehicle_id: int
    frame_id: int
    local_x: float
    local_y: float
    lane_id: int


class Lateral(str, Enum):
    KEEP = 'keep'
    LEFT = 'left'
    RIGHT = 'right'


class Longitudinal(str, Enum):
    NORMAL = 'normal'
    BRAKING = 'braking'


@dataclass(frozen=True)
class ManeuverLabel:
    lateral: Lateral
    longitudinal: Longitudinal


@dataclass(frozen=True, eq=False)
class NeighborHistory:
    """
    History of the neighbor occupying grid cell ``(channel, cell)``, relative to the target at the anchor frame.
    """

    channel: int
    cell: int
    history: np.ndarray


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    """
    One training example.

    ``neighbor_histories`` is ordered by ``(channel, cell)``, which is the row-major order of the set bits of ``mask``.
    """

    target_history: np.ndarray
    neighbor_histories: tuple
    mask: np.ndarray
    future: np.ndarray
    vehicle_id: int
    anchor_frame: int
    dataset_id: int = 1
    maneuver: ManeuverLabel = None


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


@dataclass(frozen=True)
class DataConfig:
    """
    Preprocessing settings. Hashed together with the seed into the data-config hash.
    """

    unit: str = 'meters'
    history_steps: int = 15
    future_steps: int = 5
    downsample_factor: int = 2
    split_ratios: tuple = (0.7, 0.1, 0.2)
    maneuver_window: int = 40
    braking_ratio: float = 0.8

    def __post_init__(self):
        """
        Validate the settings.

        Raises:
            ConfigurationException on any invalid value
        """
        if self.unit not in UNITS:
            raise ConfigurationException(f'Unknown unit "{self.unit}", expected one of {", ".join(UNITS)}.')
        for name in ('history_steps', 'future_steps', 'downsample_factor', 'maneuver_window'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationException(f'data.{name} must be at least 1, not {getattr(self, name)}.')
        object.__setattr__(self, 'split_ratios', tuple(float(r) for r in self.split_ratios))
        _check_ratios(self.split_ratios)

    def to_dict(self):
        values = asdict(self)
        values['split_ratios'] = list(self.split_ratios)
        return values


def _check_ratios(ratios):
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationException(f'Split ratios must be three non-negative numbers summing to 1, not {ratios}.')


def parse_records(text_stream, unit='meters'):
    """
    Parse a CSV stream of raw vehicle records.

    Args:
        text_stream: Open text stream (or path) with a header naming at least the RECORD_COLUMNS
        unit: 'meters' or 'feet'; feet are converted to meters

    Returns:
        List of RawRecord in file order. Lane ids are not capped yet.

    Raises:
        RecordParseError naming the line number of a malformed row or the missing column
    """
    if unit not in UNITS:
        raise ConfigurationException(f'Unknown unit "{unit}", expected one of {", ".join(UNITS)}.')

    try:
        frame = pd.read_csv(text_stream, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError as error:
        raise RecordParseError('Record file is empty, expected a header line.') from error
    except pd.errors.ParserError as error:
        raise RecordParseError(f'Malformed record file: {error}') from error

    frame.columns = [column.strip() for column in frame.columns]
    missing = [column for column in RECORD_COLUMNS if column not in frame.columns]
    if missing:
        raise RecordParseError(f'Missing required column(s): {", ".join(missing)}')

    parsed = {}
    first_error = None
    for column in RECORD_COLUMNS:
        raw_values = frame[column].str.strip()
        values = pd.to_numeric(raw_values, errors='coerce').to_numpy(dtype=float)
        bad = ~np.isfinite(values)
        if column in INTEGER_COLUMNS:
            bad |= np.isfinite(values) & (np.mod(values, 1) != 0)
        if bad.any():
            row = int(np.argmax(bad))
            if first_error is None or row < first_error[0]:
                first_error = (row, column, raw_values.iloc[row])
        parsed[column] = values

    if first_error is not None:
        row, column, value = first_error
        # +2: one for the header line, one for 1-based numbering
        raise RecordParseError(f'Malformed record at line {row + 2}: invalid {column} value {value!r}')

    scale = FEET_TO_METERS if unit == 'feet' else 1.0
    return [
        RawRecord(int(d), int(v), int(f), float(x) * scale, float(y) * scale, int(lane))
        for d, v, f, x, y, lane in zip(*(parsed[column] for column in RECORD_COLUMNS))
    ]


def write_records(records, text_stream):
    """
    Write records in the CSV format read by parse_records, positions in meters.
    """
    frame = pd.DataFrame([asdict(r) for r in records], columns=list(RECORD_COLUMNS))
    frame.to_csv(text_stream, index=False, lineterminator='\n')


def cap_lane(lane_id):
    """
    Cap a lane id at MAX_LANE.

    Raises:
        InvalidLaneError if lane_id < 1
    """
    if lane_id < 1:
        raise InvalidLaneError(f'Lane id must be at least 1, got {lane_id}.')
    return min(lane_id, MAX_LANE)


def normalize_records(records):
    """
    Apply lane capping to every record.
    """
    return [replace(r, lane_id=cap_lane(r.lane_id)) for r in records]


def downsample(trajectory, factor):
    """
    Keep every ``factor``-th record of a frame-sorted trajectory, starting with the first.
    """
    if factor < 1:
        raise ConfigurationException(f'Downsample factor must be at least 1, not {factor}.')
    return list(trajectory[::factor])


def _mean_speed(records):
    xy = np.array([[r.local_x, r.local_y] for r in records])
    frames = np.array([r.frame_id for r in records], dtype=float)
    elapsed = (frames[-1] - frames[0]) * FRAME_SECONDS
    if elapsed <= 0:
        return 0.0
    return float(np.hypot(*np.diff(xy, axis=0).T).sum() / elapsed)


def label_maneuver(trajectory, t_index, window=40, braking_ratio=0.8):
    """
    Label the lateral and longitudinal maneuver of a raw (not downsampled) trajectory at ``t_index``.

    Lane numbers grow to the right. Labels are metadata only, the model never reads them. The window is counted
    in frames: both ends must be exactly ``window`` frames away from the anchor with no frame missing in between.

    Raises:
        WindowUnavailableError if the look-back or look-ahead window leaves the trajectory or spans a frame gap
    """
    if t_index - window < 0 or t_index + window >= len(trajectory):
        raise WindowUnavailableError(
            f'Maneuver window of {window} frames around index {t_index} is outside a trajectory '
            f'of {len(trajectory)} records.'
        )
    anchor_frame = trajectory[t_index].frame_id
    if (trajectory[t_index - window].frame_id != anchor_frame - window
            or trajectory[t_index + window].frame_id != anchor_frame + window):
        raise WindowUnavailableError(
            f'Maneuver window of {window} frames around frame {anchor_frame} spans a frame gap.'
        )

    lane_back = trajectory[t_index - window].lane_id
    lane_now = trajectory[t_index].lane_id
    lane_ahead = trajectory[t_index + window].lane_id
    if lane_ahead < lane_now or lane_now < lane_back:
        lateral = Lateral.LEFT
    elif lane_ahead > lane_now or lane_now > lane_back:
        lateral = Lateral.RIGHT
    else:
        lateral = Lateral.KEEP

    history_speed = _mean_speed(trajectory[t_index - window:t_index + 1])
    future_speed = _mean_speed(trajectory[t_index:t_index + window + 1])
    if future_speed < braking_ratio * history_speed:
        longitudinal = Longitudinal.BRAKING
    else:
        longitudinal = Longitudinal.NORMAL

    return ManeuverLabel(lateral, longitudinal)


def grid_cell_index(delta_lane, delta_y):
    """
    Find the occupancy grid cell of a neighbor.

    Args:
        delta_lane: neighbor lane - target lane
        delta_y: neighbor y - target y, meters

    Returns:
        (channel, cell) or None when the neighbor is outside the grid
    """
    if abs(delta_lane) > 1 or not -GRID_RANGE <= delta_y < GRID_RANGE:
        return None
    cell = min(int(math.floor((delta_y + GRID_RANGE) / CELL_LENGTH)), GRID_CELLS - 1)
    return delta_lane + 1, cell


class _Track:
    """
    Frame-sorted positions of one vehicle for fast history lookups.
    """

    def __init__(self, records):
        self.records = records
        self.frames = np.array([r.frame_id for r in records], dtype=np.int64)
        self.xy = np.array([[r.local_x, r.local_y] for r in records], dtype=float)
        self.index_of_frame = {r.frame_id: i for i, r in enumerate(records)}

    def positions_at(self, frames):
        """
        Return the positions at the given frames, or None if any of them is missing.
        """
        idx = np.searchsorted(self.frames, frames)
        if idx.max() >= len(self.frames) or np.any(self.frames[idx] != frames):
            return None
        return self.xy[idx]


def _group_tracks(records):
    grouped = defaultdict(list)
    for record in records:
        grouped[(record.dataset_id, record.vehicle_id)].append(record)
    return {key: _Track(sorted(rows, key=lambda r: r.frame_id)) for key, rows in grouped.items()}


def _index_frames(tracks):
    by_frame = defaultdict(list)
    for (dataset_id, vehicle_id), track in tracks.items():
        for record in track.records:
            by_frame[(dataset_id, record.frame_id)].append((vehicle_id, record.lane_id, record.local_y))
    return {
        key: tuple(np.array(column) for column in zip(*sorted(rows)))
        for key, rows in by_frame.items()
    }


def _resolve_neighbors(anchor, history_frames, origin, frame_index, tracks):
    vehicle_ids, lanes, ys = frame_index[(anchor.dataset_id, anchor.frame_id)]
    delta_lanes = lanes - anchor.lane_id
    delta_ys = ys - anchor.local_y
    in_grid = (
        (vehicle_ids != anchor.vehicle_id)
        & (np.abs(delta_lanes) <= 1)
        & (delta_ys >= -GRID_RANGE)
        & (delta_ys < GRID_RANGE)
    )

    closest = {}
    for vehicle_id, delta_lane, delta_y in zip(vehicle_ids[in_grid], delta_lanes[in_grid], delta_ys[in_grid]):
        cell = grid_cell_index(int(delta_lane), float(delta_y))
        if cell is None or cell == TARGET_CELL:
            continue
        rank = (abs(float(delta_y)), int(vehicle_id))
        if cell not in closest or rank < closest[cell]:
            closest[cell] = rank

    neighbors = []
    for channel, cell in sorted(closest):
        positions = tracks[(anchor.dataset_id, closest[(channel, cell)][1])].positions_at(history_frames)
        # Neighbors without a full history leave their cell empty
        if positions is None:
            continue
        neighbors.append(NeighborHistory(channel, cell, positions - origin))
    return tuple(neighbors)


def _vehicle_samples(track, frame_index, tracks, history_steps, future_steps, downsample_factor,
                     maneuver_window, braking_ratio):
    steps = downsample(track.records, downsample_factor)
    window = history_steps + future_steps
    expected_span = (window - 1) * downsample_factor

    for i in range(history_steps - 1, len(steps) - future_steps):
        window_records = steps[i - history_steps + 1:i + future_steps + 1]
        if window_records[-1].frame_id - window_records[0].frame_id != expected_span:
            continue

        anchor = steps[i]
        origin = np.array([anchor.local_x, anchor.local_y])
        relative = np.array([[r.local_x, r.local_y] for r in window_records]) - origin
        history_frames = np.array([r.frame_id for r in window_records[:history_steps]], dtype=np.int64)

        neighbors = _resolve_neighbors(anchor, history_frames, origin, frame_index, tracks)
        mask = np.zeros((GRID_CHANNELS, GRID_CELLS), dtype=np.uint8)
        for neighbor in neighbors:
            mask[neighbor.channel, neighbor.cell] = 1

        try:
            maneuver = label_maneuver(
                track.records, track.index_of_frame[anchor.frame_id], maneuver_window, braking_ratio
            )
        except WindowUnavailableError:
            maneuver = None

        yield TrajectorySample(
            target_history=relative[:history_steps],
            neighbor_histories=neighbors,
            mask=mask,
            future=relative[history_steps:],
            vehicle_id=anchor.vehicle_id,
            anchor_frame=anchor.frame_id,
            dataset_id=anchor.dataset_id,
            maneuver=maneuver,
        )


def build_samples(records, history_steps=15, future_steps=5, downsample_factor=2, maneuver_window=40,
                  braking_ratio=0.8):
    """
    Window every vehicle's downsampled trajectory into samples.

    Anchors advance one downsampled step at a time. Windows without enough history or future are skipped.

    Args:
        records: Normalized RawRecord list (lanes capped, meters)

    Returns:
        List of TrajectorySample sorted by (vehicle_id, anchor_frame)
    """
    tracks = _group_tracks(records)
    frame_index = _index_frames(tracks)

    samples = []
    for key in sorted(tracks):
        samples.extend(_vehicle_samples(
            tracks[key], frame_index, tracks, history_steps, future_steps, downsample_factor,
            maneuver_window, braking_ratio,
        ))

    samples.sort(key=lambda s: (s.vehicle_id, s.anchor_frame, s.dataset_id))
    return samples


def split_dataset(samples, ratios=(0.7, 0.1, 0.2), seed=0):
    """
    Split samples into train / validation / test by vehicle id.

    The sorted vehicle ids are shuffled with a seeded permutation; train and validation get the rounded-down share,
    test gets the remainder. Every sample follows its vehicle.

    Raises:
        SplitInfeasibleError with fewer than three distinct vehicles
    """
    ratios = tuple(float(r) for r in ratios)
    _check_ratios(ratios)

    vehicle_ids = sorted({s.vehicle_id for s in samples})
    if len(vehicle_ids) < 3:
        raise SplitInfeasibleError(
            f'At least 3 distinct vehicles are needed to split a dataset, found {len(vehicle_ids)}.'
        )

    order = np.random.default_rng(seed).permutation(len(vehicle_ids))
    shuffled = [vehicle_ids[i] for i in order]
    n_train = int(math.floor(ratios[0] * len(shuffled) + 1e-9))
    n_validation = int(math.floor(ratios[1] * len(shuffled) + 1e-9))

    membership = {}
    for position, vehicle_id in enumerate(shuffled):
        if position < n_train:
            membership[vehicle_id] = 'train'
        elif position < n_train + n_validation:
            membership[vehicle_id] = 'validation'
        else:
            membership[vehicle_id] = 'test'

    split = DatasetSplit()
    for sample in samples:
        getattr(split, membership[sample.vehicle_id]).append(sample)
    return split


_LATERAL_CODES = {None: -1, Lateral.KEEP: 0, Lateral.LEFT: 1, Lateral.RIGHT: 2}
_LONGITUDINAL_CODES = {None: -1, Longitudinal.NORMAL: 0, Longitudinal.BRAKING: 1}


def save_samples(samples, file_path, data_config_hash):
    """
    Write samples to a ``.npz`` container.

    Layout (N samples, M neighbors in total, T history steps, F future steps):

    * ``schema_version``, ``config_hash``: scalar strings
    * ``target_history`` (N, T, 2), ``future`` (N, F, 2), ``mask`` (N, 3, 13) uint8
    * ``vehicle_id``, ``anchor_frame``, ``dataset_id`` (N,) int64
    * ``lateral``, ``longitudinal`` (N,) int8 maneuver codes, -1 when unlabeled
    * ``neighbor_offsets`` (N + 1,): neighbors of sample i are rows offsets[i]:offsets[i+1] of
      ``neighbor_channel``, ``neighbor_cell`` (M,) and ``neighbor_history`` (M, T, 2)
    """
    history_steps = samples[0].target_history.shape[0] if samples else 0
    future_steps = samples[0].future.shape[0] if samples else 0
    neighbors = [n for s in samples for n in s.neighbor_histories]

    arrays = {
        'schema_version': np.array(SAMPLES_SCHEMA_VERSION),
        'config_hash': np.array(data_config_hash),
        'target_history': _stack([s.target_history for s in samples], (history_steps, 2)),
        'future': _stack([s.future for s in samples], (future_steps, 2)),
        'mask': _stack([s.mask for s in samples], (GRID_CHANNELS, GRID_CELLS), np.uint8),
        'vehicle_id': np.array([s.vehicle_id for s in samples], dtype=np.int64),
        'anchor_frame': np.array([s.anchor_frame for s in samples], dtype=np.int64),
        'dataset_id': np.array([s.dataset_id for s in samples], dtype=np.int64),
        'lateral': np.array([_LATERAL_CODES[s.maneuver and s.maneuver.lateral] for s in samples], dtype=np.int8),
        'longitudinal': np.array(
            [_LONGITUDINAL_CODES[s.maneuver and s.maneuver.longitudinal] for s in samples], dtype=np.int8
        ),
        'neighbor_offsets': np.cumsum([0] + [len(s.neighbor_histories) for s in samples]).astype(np.int64),
        'neighbor_channel': np.array([n.channel for n in neighbors], dtype=np.int64),
        'neighbor_cell': np.array([n.cell for n in neighbors], dtype=np.int64),
        'neighbor_history': _stack([n.history for n in neighbors], (history_steps, 2)),
    }
    write_npz(file_path, arrays)


def _stack(rows, row_shape, dtype=float):
    if not rows:
        return np.zeros((0,) + row_shape, dtype=dtype)
    return np.array(rows, dtype=dtype)


def load_samples(file_path):
    """
    Read samples written by save_samples.

    Returns:
        Tuple of (list of TrajectorySample, data-config hash)

    Raises:
        CompatibilityError if the file was written with another schema version
    """
    lateral_labels = {code: label for label, code in _LATERAL_CODES.items()}
    longitudinal_labels = {code: label for label, code in _LONGITUDINAL_CODES.items()}

    with np.load(file_path, allow_pickle=False) as data:
        version = str(data['schema_version'])
        if version != SAMPLES_SCHEMA_VERSION:
            raise CompatibilityError(
                f'{file_path} has schema version {version}, expected {SAMPLES_SCHEMA_VERSION}.'
            )
        arrays = {key: data[key] for key in data.files}

    offsets = arrays['neighbor_offsets']
    samples = []
    for i in range(len(arrays['vehicle_id'])):
        neighbors = tuple(
            NeighborHistory(int(arrays['neighbor_channel'][j]), int(arrays['neighbor_cell'][j]),
                            arrays['neighbor_history'][j])
            for j in range(offsets[i], offsets[i + 1])
        )
        lateral = lateral_labels[int(arrays['lateral'][i])]
        longitudinal = longitudinal_labels[int(arrays['longitudinal'][i])]
        samples.append(TrajectorySample(
            target_history=arrays['target_history'][i],
            neighbor_histories=neighbors,
            mask=arrays['mask'][i],
            future=arrays['future'][i],
            vehicle_id=int(arrays['vehicle_id'][i]),
            anchor_frame=int(arrays['anchor_frame'][i]),
            dataset_id=int(arrays['dataset_id'][i]),
            maneuver=ManeuverLabel(lateral, longitudinal) if lateral is not None else None,
        ))
    return samples, str(arrays['config_hash'])
