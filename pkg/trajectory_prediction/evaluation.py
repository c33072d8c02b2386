"""
Per-step RMSE evaluation, physics baselines and the CSV files consumed by external plotting.
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from trajectory_prediction.exceptions import CompatibilityError, EmptyEvaluationError, ShapeError

REPORT_COLUMNS = ('model_tag', 'step', 'rmse')
PREDICTION_COLUMNS = ('dataset_id', 'vehicle_id', 'anchor_frame', 'step', 'x', 'y')


@dataclass(frozen=True)
class RmseReport:
    """
    Root-mean-square displacement error per prediction step, in the data's length unit.
    """

    model_tag: str
    per_step: tuple
    sample_count: int
    data_config_hash: str = ''

    @property
    def mean(self):
        return float(np.mean(self.per_step))


def rmse_per_step(preds, truths):
    """
    For each step t: ``sqrt(mean_i((x_hat - x)^2 + (y_hat - y)^2))``.

    Args:
        preds: (N, steps, 2)
        truths: (N, steps, 2)

    Returns:
        Tuple with one RMSE per step

    Raises:
        EmptyEvaluationError when N is 0
    """
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if preds.shape != truths.shape or preds.ndim != 3 or preds.shape[-1] != 2:
        raise ShapeError(f'Predictions {preds.shape} and ground truth {truths.shape} must both be (N, steps, 2).')
    if preds.shape[0] == 0:
        raise EmptyEvaluationError('Cannot compute RMSE over zero samples.')
    squared = np.sum((preds - truths) ** 2, axis=-1)
    return tuple(float(value) for value in np.sqrt(squared.mean(axis=0)))


def constant_velocity_predict(history, horizon=5):
    """
    Extrapolate the last observed displacement: step k is ``p_T + k * (p_T - p_{T-1})``.
    """
    return averaged_velocity_predict(history, horizon, window=1)


def averaged_velocity_predict(history, horizon=5, window=3):
    """
    Extrapolate the mean displacement of the last ``window`` steps (clipped to the available history).
    """
    history = np.asarray(history, dtype=float)
    if history.ndim != 2 or history.shape[0] < 2:
        raise ShapeError(f'Velocity extrapolation needs at least 2 history points, got shape {history.shape}.')
    window = max(1, min(int(window), history.shape[0] - 1))
    velocity = (history[-1] - history[-1 - window]) / window
    return history[-1] + np.arange(1, horizon + 1)[:, None] * velocity


def evaluate(predictor, samples, data_config_hash='', echo=None):
    """
    Run a predictor over samples in their given order and measure per-step RMSE.

    Args:
        predictor: Object with ``model_tag``, ``data_config_hash`` (empty for predictors not tied to a dataset) and
            ``predict(samples) -> (N, horizon, 2)``
        samples: Test samples
        data_config_hash: Hash of the dataset the samples were built with

    Returns:
        Tuple of (RmseReport, (N, horizon, 2) predictions)

    Raises:
        CompatibilityError when the predictor was trained on data built with another data config
        EmptyEvaluationError when there are no samples
    """
    if predictor.data_config_hash and data_config_hash and predictor.data_config_hash != data_config_hash:
        raise CompatibilityError(
            f'Predictor "{predictor.model_tag}" was trained on data config {predictor.data_config_hash[:12]} but the '
            f'test samples were built with data config {data_config_hash[:12]}.'
        )
    if not samples:
        raise EmptyEvaluationError(f'No test samples to evaluate "{predictor.model_tag}" on.')

    if echo:
        echo.echo_v(f'Evaluating {predictor.model_tag} on {len(samples)} samples')
    predictions = np.asarray(predictor.predict(samples), dtype=float)
    truths = np.array([s.future for s in samples], dtype=float)
    report = RmseReport(
        model_tag=predictor.model_tag,
        per_step=rmse_per_step(predictions, truths),
        sample_count=len(samples),
        data_config_hash=data_config_hash,
    )
    if echo:
        echo.echo_vv(f'{report.model_tag}: ' + ', '.join(f'{value:.4f}' for value in report.per_step))
    return report, predictions


def write_report_csv(reports, file_path):
    """
    Write ``model_tag, step, rmse`` rows, steps numbered from 1.

    Raises:
        ShapeError if a model tag appears more than once
    """
    tags = [report.model_tag for report in reports]
    repeated = sorted({tag for tag in tags if tags.count(tag) > 1})
    if repeated:
        raise ShapeError(f'Model tag(s) appear more than once: {", ".join(repeated)}.')
    rows = [
        (report.model_tag, step, value)
        for report in reports
        for step, value in enumerate(report.per_step, start=1)
    ]
    pd.DataFrame(rows, columns=REPORT_COLUMNS).to_csv(
        file_path, index=False, float_format='%.12e', lineterminator='\n'
    )


def read_report_csv(file_path):
    """
    Read reports written by write_report_csv. Sample counts are not stored and come back as 0.

    Raises:
        ShapeError on missing columns or on a model tag with repeated or non-consecutive steps
    """
    frame = pd.read_csv(file_path, dtype={'model_tag': str})
    missing = [column for column in REPORT_COLUMNS if column not in frame.columns]
    if missing:
        raise ShapeError(f'{file_path} is missing column(s): {", ".join(missing)}.')

    reports = []
    for model_tag, rows in frame.groupby('model_tag', sort=False):
        rows = rows.sort_values('step')
        if list(rows['step']) != list(range(1, len(rows) + 1)):
            raise ShapeError(f'{file_path} has repeated or missing steps for model tag "{model_tag}".')
        reports.append(RmseReport(model_tag=model_tag, per_step=tuple(float(v) for v in rows['rmse']),
                                  sample_count=0))
    return reports


def write_plot_csv(reports, file_path):
    """
    Write one ``step`` column and one RMSE column per model, for plotting RMSE against the prediction step.
    """
    frame = pd.DataFrame({'step': np.arange(1, max(len(r.per_step) for r in reports) + 1)})
    for report in reports:
        if report.model_tag in frame.columns:
            raise ShapeError(f'Model tag "{report.model_tag}" appears more than once.')
        frame[report.model_tag] = pd.Series(report.per_step)
    frame.to_csv(file_path, index=False, float_format='%.12e', na_rep='', lineterminator='\n')


def write_predictions_csv(samples, predictions, file_path):
    """
    Write one row per sample and prediction step with the predicted relative coordinates.
    """
    rows = [
        (sample.dataset_id, sample.vehicle_id, sample.anchor_frame, step, point[0], point[1])
        for sample, coords in zip(samples, predictions)
        for step, point in enumerate(coords, start=1)
    ]
    pd.DataFrame(rows, columns=PREDICTION_COLUMNS).to_csv(
        file_path, index=False, float_format='%.12e', lineterminator='\n'
    )
