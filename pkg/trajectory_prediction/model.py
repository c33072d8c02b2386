"""
The hybrid predictor: target and neighbor encoders, masked scatter into the social grid, LSTM decoder and output head.

Each encoder is ``embed -> LSTM -> transformer encoder layer`` and keeps the row of the last timestep. The target
stack and the neighbor stack have separate parameters; every neighbor shares the neighbor stack. The decoder receives
the combined vector ``concat(flatten(social), target)`` as its input at every decode step.
"""
from dataclasses import asdict, dataclass

import numpy as np

from trajectory_prediction.exceptions import ConfigurationException, IntegrityError, NumericError, ShapeError
from trajectory_prediction.neural_core import (
    ParamStore,
    embed,
    embed_backward,
    linear,
    linear_backward,
    lstm_cell,
    lstm_cell_backward,
    lstm_encode,
    lstm_encode_backward,
    param_layout,
    transformer_encoder_layer,
    transformer_encoder_layer_backward
)
from trajectory_prediction.social_grid import build_mask, flatten_social, masked_gather, masked_scatter

VARIANTS = ('full', 'naive_lstm')
DECODER_INPUTS = ('every_step',)


@dataclass(frozen=True)
class ModelConfig:
    """
    Dimensions and variant of the predictor.
    """

    history_steps: int = 15
    horizon: int = 5
    embed_dim: int = 32
    hidden_dim: int = 64
    ffn_dim: int = 512
    heads: int = 8
    decoder_hidden: int = 128
    grid_channels: int = 3
    grid_cells: int = 13
    variant: str = 'full'
    decoder_input: str = 'every_step'

    def __post_init__(self):
        """
        Validate the dimensions.

        Raises:
            ConfigurationException on any invalid value
        """
        for name in ('history_steps', 'horizon', 'embed_dim', 'hidden_dim', 'ffn_dim', 'heads', 'decoder_hidden',
                     'grid_channels', 'grid_cells'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationException(f'model.{name} must be at least 1, not {getattr(self, name)}.')
        if self.hidden_dim % self.heads:
            raise ConfigurationException(
                f'model.hidden_dim ({self.hidden_dim}) must be divisible by model.heads ({self.heads}).'
            )
        if self.variant not in VARIANTS:
            raise ConfigurationException(f'Unknown model variant "{self.variant}", expected one of {VARIANTS}.')
        if self.decoder_input not in DECODER_INPUTS:
            raise ConfigurationException(
                f'Unknown decoder input mode "{self.decoder_input}", expected one of {DECODER_INPUTS}.'
            )

    @property
    def social_dim(self):
        if self.variant == 'naive_lstm':
            return 0
        return self.grid_channels * self.grid_cells * self.hidden_dim

    @property
    def combined_dim(self):
        return self.social_dim + self.hidden_dim

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """
    Samples stacked for one forward pass.

    ``neighbor_history`` rows follow the row-major order of the set bits of ``masks``, i.e. sample, then channel,
    then cell.
    """

    history: np.ndarray
    future: np.ndarray
    masks: np.ndarray
    neighbor_history: np.ndarray

    def __len__(self):
        return self.history.shape[0]


def _ordered_neighbors(sample, config):
    mask = build_mask(sample, config.grid_channels, config.grid_cells)
    if sample.mask is not None and not np.array_equal(np.asarray(sample.mask, dtype=np.uint8), mask):
        raise IntegrityError(
            f'Mask of vehicle {sample.vehicle_id} at frame {sample.anchor_frame} does not match its neighbor list.'
        )
    return mask, sorted(sample.neighbor_histories, key=lambda n: (n.channel, n.cell))


def collate(samples, config, dtype=float):
    """
    Stack samples into a Batch of ``dtype`` arrays, checking history lengths and masks against ``config``.
    """
    if not samples:
        raise ShapeError('Cannot collate an empty list of samples.')

    expected = (config.history_steps, 2)
    masks = []
    neighbor_rows = []
    for sample in samples:
        if sample.target_history.shape != expected:
            raise ShapeError(
                f'History of vehicle {sample.vehicle_id} has shape {sample.target_history.shape}, expected {expected}.'
            )
        mask, neighbors = _ordered_neighbors(sample, config)
        masks.append(mask)
        neighbor_rows.extend(n.history for n in neighbors)

    return Batch(
        history=np.array([s.target_history for s in samples], dtype=dtype),
        future=np.array([s.future for s in samples], dtype=dtype),
        masks=np.array(masks, dtype=bool),
        neighbor_history=np.array(neighbor_rows, dtype=dtype).reshape((-1,) + expected),
    )


def check_params(params, config):
    """
    Raises:
        ShapeError if the parameter names or shapes differ from what ``config`` describes
    """
    expected = {name: shape for name, shape, _ in param_layout(config)}
    actual = params.shapes()
    missing = sorted(set(expected) - set(actual))
    unexpected = sorted(set(actual) - set(expected))
    wrong = sorted(name for name in set(expected) & set(actual) if tuple(expected[name]) != tuple(actual[name]))
    if missing or unexpected or wrong:
        details = []
        if missing:
            details.append(f'missing {", ".join(missing)}')
        if unexpected:
            details.append(f'unexpected {", ".join(unexpected)}')
        for name in wrong:
            details.append(f'{name} is {actual[name]}, expected {expected[name]}')
        raise ShapeError(f'Parameters do not match the {config.variant} model config: {"; ".join(details)}.')


def _encode_stack(sequences, params, prefix, heads):
    embedded, embed_cache = embed(sequences, params, f'{prefix}.embed')
    states, lstm_cache = lstm_encode(embedded, params, f'{prefix}.lstm')
    encoded, transformer_cache = transformer_encoder_layer(states, params, f'{prefix}.transformer', heads)
    return encoded[..., -1, :], (encoded.shape, embed_cache, lstm_cache, transformer_cache)


def _encode_stack_backward(d_last, cache, params, prefix):
    shape, embed_cache, lstm_cache, transformer_cache = cache
    d_encoded = np.zeros(shape, dtype=d_last.dtype)
    d_encoded[..., -1, :] = d_last
    d_states = transformer_encoder_layer_backward(d_encoded, transformer_cache, params, f'{prefix}.transformer')
    d_embedded = lstm_encode_backward(d_states, lstm_cache, params, f'{prefix}.lstm')
    embed_backward(d_embedded, embed_cache, params, f'{prefix}.embed')


def encode_target(history, params, config):
    """
    Encode one ``(T, 2)`` target history into a ``hidden_dim`` vector.
    """
    encoding, _ = _encode_stack(np.asarray(history, dtype=float)[None], params, 'target', config.heads)
    return encoding[0]


def encode_neighbors(neighbor_histories, mask, params, config):
    """
    Encode neighbor histories with the shared neighbor stack and scatter them into a social encoding.

    Args:
        neighbor_histories: NeighborHistory objects in any order
        mask: (channels, cells) occupancy mask matching the neighbor positions

    Returns:
        (channels, cells, hidden_dim) social encoding, zero at empty cells
    """
    ordered = sorted(neighbor_histories, key=lambda n: (n.channel, n.cell))
    occupied = [tuple(position) for position in np.argwhere(np.asarray(mask).astype(bool))]
    if occupied != [(n.channel, n.cell) for n in ordered]:
        raise IntegrityError(f'Neighbor cells {[(n.channel, n.cell) for n in ordered]} do not match the mask.')

    if not ordered:
        return np.zeros((config.grid_channels, config.grid_cells, config.hidden_dim))
    histories = np.array([n.history for n in ordered], dtype=float)
    encodings, _ = _encode_stack(histories, params, 'neighbor', config.heads)
    return masked_scatter(mask, encodings)


def forward_batch(batch, params, config):
    """
    Run the predictor on a collated batch.

    Returns:
        ((B, horizon, 2) predictions, cache for backward)
    """
    check_params(params, config)

    target, target_cache = _encode_stack(batch.history, params, 'target', config.heads)
    neighbor_cache = None
    if config.variant == 'full':
        if len(batch.neighbor_history):
            encodings, neighbor_cache = _encode_stack(batch.neighbor_history, params, 'neighbor', config.heads)
        else:
            encodings = np.zeros((0, config.hidden_dim), dtype=target.dtype)
        social = masked_scatter(batch.masks, encodings)
        combined = np.concatenate([flatten_social(social), target], axis=-1)
    else:
        combined = target

    h = np.zeros((len(batch), config.decoder_hidden), dtype=target.dtype)
    c = np.zeros_like(h)
    states = []
    decoder_caches = []
    for _ in range(config.horizon):
        h, c, cell_cache = lstm_cell(combined, h, c, params, 'decoder.lstm')
        states.append(h)
        decoder_caches.append(cell_cache)
    predictions, head_cache = linear(np.stack(states, axis=1), params, 'decoder.head')

    if not np.all(np.isfinite(predictions)):
        raise NumericError('Model produced non-finite predictions.')
    return predictions, (batch.masks, target_cache, neighbor_cache, decoder_caches, head_cache)


def backward(d_predictions, cache, params, config):
    """
    Accumulate the gradient of ``d_predictions`` into ``params.grads``.
    """
    masks, target_cache, neighbor_cache, decoder_caches, head_cache = cache

    d_states = linear_backward(d_predictions, head_cache, params, 'decoder.head')
    d_combined = np.zeros((d_states.shape[0], config.combined_dim), dtype=d_states.dtype)
    d_h = np.zeros((d_states.shape[0], config.decoder_hidden), dtype=d_states.dtype)
    d_c = np.zeros_like(d_h)
    for step in reversed(range(config.horizon)):
        d_input, d_h, d_c = lstm_cell_backward(d_states[:, step] + d_h, d_c, decoder_caches[step], params,
                                               'decoder.lstm')
        d_combined += d_input

    social_dim = config.social_dim
    _encode_stack_backward(d_combined[:, social_dim:], target_cache, params, 'target')
    if neighbor_cache is not None:
        d_social = d_combined[:, :social_dim].reshape(
            (-1, config.grid_channels, config.grid_cells, config.hidden_dim)
        )
        _encode_stack_backward(masked_gather(masks, d_social), neighbor_cache, params, 'neighbor')


def forward(samples, params, config):
    """
    Predict ``(B, horizon, 2)`` future positions for a list of samples.
    """
    predictions, _ = forward_batch(collate(samples, config), params, config)
    return predictions


@dataclass
class Checkpoint:
    params: ParamStore
    config: ModelConfig
    data_config_hash: str
    metadata: dict


def save_checkpoint(file_path, params, config, data_config_hash, **metadata):
    """
    Write parameters, the model config and the data-config hash of the training data to one ``.npz`` file.
    """
    params.save(file_path, config_hash=data_config_hash, metadata={'model_config': config.to_dict(), **metadata})


def load_checkpoint(file_path):
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        ShapeError if the stored parameters do not fit the stored config
    """
    params, data_config_hash, metadata = ParamStore.load(file_path)
    config = ModelConfig(**metadata.pop('model_config'))
    check_params(params, config)
    return Checkpoint(params=params, config=config, data_config_hash=data_config_hash, metadata=metadata)
