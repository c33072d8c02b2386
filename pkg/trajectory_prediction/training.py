"""
Loss, Adam and the epoch loop.
"""
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from trajectory_prediction.exceptions import ConfigurationException, DivergenceError, NumericError, ShapeError
from trajectory_prediction.model import backward, collate, forward_batch, save_checkpoint
from trajectory_prediction.neural_core import init_params

TRAIN_DTYPES = ('float64', 'float32')


@dataclass(frozen=True)
class TrainConfig:
    """
    Epoch loop and optimizer settings.
    """

    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    shuffle: bool = True
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dtype: str = 'float64'

    def __post_init__(self):
        """
        Validate the settings.

        Raises:
            ConfigurationException on any invalid value
        """
        if int(self.epochs) < 1:
            raise ConfigurationException(f'train.epochs must be at least 1, not {self.epochs}.')
        if int(self.batch_size) < 1:
            raise ConfigurationException(f'train.batch_size must be at least 1, not {self.batch_size}.')
        if not self.lr > 0 or not self.epsilon > 0:
            raise ConfigurationException('train.lr and train.epsilon must be positive.')
        for name in ('beta1', 'beta2'):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigurationException(f'train.{name} must be in [0, 1), not {getattr(self, name)}.')
        if self.dtype not in TRAIN_DTYPES:
            raise ConfigurationException(
                f'train.dtype must be one of {", ".join(TRAIN_DTYPES)}, not {self.dtype!r}.'
            )

    def to_dict(self):
        return asdict(self)


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f'Prediction shape {pred.shape} does not match ground truth shape {truth.shape}.')
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise NumericError('Loss inputs contain non-finite values.')
    return pred, truth


def trajectory_loss(pred, truth):
    """
    Squared displacement error summed over steps and coordinates, averaged over the batch.

    Args:
        pred: (B, steps, 2) predicted positions
        truth: (B, steps, 2) true positions
    """
    pred, truth = _check_pair(pred, truth)
    loss = float(np.sum((pred - truth) ** 2) / pred.shape[0])
    if not np.isfinite(loss):
        raise NumericError(f'Loss overflowed to {loss}.')
    return loss


def trajectory_loss_grad(pred, truth):
    pred, truth = _check_pair(pred, truth)
    return 2.0 * (pred - truth) / pred.shape[0]


@dataclass
class OptimizerState:
    """
    Adam moments, step counter and hyper-parameters.
    """

    first_moment: dict
    second_moment: dict
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, params, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            first_moment={name: np.zeros_like(value) for name, value in params.values.items()},
            second_moment={name: np.zeros_like(value) for name, value in params.values.items()},
            lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
        )


def adam_step(params, grads, state):
    """
    Apply one bias-corrected Adam update in place.

    Raises:
        NumericError naming the first parameter with a non-finite gradient; nothing is updated in that case
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f'Gradient of {name} contains non-finite values at optimizer step {state.step + 1}.')

    state.step += 1
    first_correction = 1.0 - state.beta1 ** state.step
    second_correction = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad ** 2
        params.values[name] -= state.lr * (m / first_correction) / (np.sqrt(v / second_correction) + state.epsilon)
    return params, state


@dataclass
class EpochLoss:
    epoch: int
    train_loss: float
    val_loss: float = None


@dataclass
class TrainingResult:
    """
    Outcome of train(): the retained checkpoint, the final parameters and the per-epoch losses.
    """

    best_params: object
    last_params: object
    best_epoch: int
    history: list = field(default_factory=list)


def _batches(samples, batch_size, order):
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]


def dataset_loss(samples, params, model_config, batch_size=128, dtype=float):
    """
    Mean per-sample loss over a list of samples, evaluated batch by batch.
    """
    total = 0.0
    for batch_samples in _batches(samples, batch_size, np.arange(len(samples))):
        batch = collate(batch_samples, model_config, dtype)
        predictions, _ = forward_batch(batch, params, model_config)
        total += trajectory_loss(predictions, batch.future) * len(batch)
    return total / len(samples)


def _write_losses(history, run_dir):
    frame = pd.DataFrame([asdict(entry) for entry in history], columns=['epoch', 'train_loss', 'val_loss'])
    frame.to_csv(os.path.join(run_dir, 'losses.csv'), index=False, float_format='%.12e', na_rep='',
                 lineterminator='\n')


def _diverged(run_dir, params, model_config, data_config_hash, epoch, batch_index, reason, echo):
    diagnostics = {'epoch': epoch, 'batch': batch_index, 'reason': reason}
    if run_dir:
        with open(os.path.join(run_dir, 'divergence.json'), 'w') as diagnostics_file:
            json.dump(diagnostics, diagnostics_file, indent=2, sort_keys=True)
        save_checkpoint(os.path.join(run_dir, 'last.npz'), params, model_config, data_config_hash, epoch=epoch - 1)
    if echo:
        echo(f'Training diverged at epoch {epoch}, batch {batch_index}: {reason}', fg='red')
    return DivergenceError(f'Training diverged at epoch {epoch}, batch {batch_index}: {reason}')


def train(dataset, model_config, train_config, run_dir=None, echo=None, data_config_hash=''):
    """
    Train a model from a seeded initialization.

    Each epoch shuffles the training samples with a seeded generator, runs forward, loss, backward and Adam per
    batch (the last partial batch is kept), then measures the validation loss. Parameters, batches and gradients use
    ``train_config.dtype``; losses are accumulated in double precision. The parameters with the lowest
    validation loss are retained; without validation samples the last parameters are retained.

    Args:
        dataset: DatasetSplit with a non-empty train list
        model_config: ModelConfig
        train_config: TrainConfig
        run_dir: Optional directory for ``losses.csv``, ``best.npz``, ``last.npz`` and ``divergence.json``
        echo: Optional VerboseEcho
        data_config_hash: Hash stamped into the checkpoints

    Raises:
        DivergenceError once the loss or a gradient became non-finite, after persisting diagnostics and the last
        finite parameters
    """
    if not dataset.train:
        raise ShapeError('Cannot train on an empty training split.')

    dtype = np.dtype(train_config.dtype)
    params = init_params(model_config, train_config.seed, dtype)
    state = OptimizerState.create(params, train_config.lr, train_config.beta1, train_config.beta2,
                                  train_config.epsilon)
    rng = np.random.default_rng(train_config.seed)
    samples = dataset.train
    history = []
    best_params, best_loss, best_epoch = None, None, None

    if echo:
        echo.echo_v(f'Training {model_config.variant} model with {params.size} parameters on {len(samples)} samples')

    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(len(samples)) if train_config.shuffle else np.arange(len(samples))
        epoch_total = 0.0
        for batch_index, batch_samples in enumerate(_batches(samples, train_config.batch_size, order)):
            batch = collate(batch_samples, model_config, dtype)
            params.zero_grads()
            try:
                predictions, cache = forward_batch(batch, params, model_config)
                loss = trajectory_loss(predictions, batch.future)
                backward(trajectory_loss_grad(predictions, batch.future).astype(dtype), cache, params, model_config)
                adam_step(params, params.grads, state)
            except NumericError as e:
                raise _diverged(run_dir, params, model_config, data_config_hash, epoch, batch_index,
                                str(e), echo) from e
            epoch_total += loss * len(batch)
            if echo:
                echo.echo_vvv(f'Epoch {epoch} batch {batch_index}: loss {loss:.6f}')

        entry = EpochLoss(epoch=epoch, train_loss=epoch_total / len(samples))
        if dataset.validation:
            try:
                entry.val_loss = dataset_loss(
                    dataset.validation, params, model_config, train_config.batch_size, dtype
                )
            except NumericError as e:
                raise _diverged(run_dir, params, model_config, data_config_hash, epoch, -1, str(e), echo) from e
            if best_loss is None or entry.val_loss < best_loss:
                best_params, best_loss, best_epoch = params.copy(), entry.val_loss, epoch
        history.append(entry)

        if echo:
            val_text = 'n/a' if entry.val_loss is None else f'{entry.val_loss:.6f}'
            echo.echo_v(f'Epoch {epoch}/{train_config.epochs}: train {entry.train_loss:.6f}, validation {val_text}')

    if best_params is None:
        best_params, best_epoch = params.copy(), train_config.epochs

    if run_dir:
        _write_losses(history, run_dir)
        save_checkpoint(os.path.join(run_dir, 'best.npz'), best_params, model_config, data_config_hash,
                        epoch=best_epoch, seed=train_config.seed)
        save_checkpoint(os.path.join(run_dir, 'last.npz'), params, model_config, data_config_hash,
                        epoch=train_config.epochs, seed=train_config.seed)

    return TrainingResult(best_params=best_params, last_params=params, best_epoch=best_epoch, history=history)
