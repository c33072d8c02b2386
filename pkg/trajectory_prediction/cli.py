"""
Command line interface for the trajectory prediction pipeline.
"""
import datetime
import os
import traceback

import click

from trajectory_prediction.base import RunConfig
from trajectory_prediction.data_pipeline import (
    UNITS,
    DatasetSplit,
    build_samples,
    load_samples,
    normalize_records,
    parse_records,
    save_samples,
    split_dataset,
    write_records
)
from trajectory_prediction.evaluation import (
    evaluate,
    read_report_csv,
    write_plot_csv,
    write_predictions_csv,
    write_report_csv
)
from trajectory_prediction.exceptions import CompatibilityError, ConfigurationException
from trajectory_prediction.helpers import EXIT_CODE_BAD_CONFIG, fail
from trajectory_prediction.report import ReportRenderer
from trajectory_prediction.selfcheck import run_selfcheck
from trajectory_prediction.synth_data import generate
from trajectory_prediction.training import train as train_model

SPLITS = ("train", "validation", "test")


def _handle_failure(exc):
    """
    Exit with 2 for configuration and compatibility problems, 1 for anything else.
    """
    if isinstance(exc, (ConfigurationException, CompatibilityError)):
        fail(str(exc), EXIT_CODE_BAD_CONFIG)
    click.echo(traceback.format_exc())
    fail(str(exc))


RUN_OPTIONS = (
    click.option(
        "--config",
        "config_file",
        default=None,
        help="Path to the YAML run configuration, built-in defaults if omitted",
        type=click.Path(exists=True, dir_okay=False),
    ),
    click.option("--seed", default=None, type=int, help="Seed, overrides every seed in the configuration"),
    click.option("--out", default=None, help="Output directory, overrides the configuration"),
    click.option("--unit", default=None, type=click.Choice(UNITS), help="Length unit of the raw records"),
    click.option("-v", "--verbosity", count=True, help="Verbosity level (-v through -vvv)"),
)


def run_options(command):
    """
    Add the options shared by every pipeline subcommand.
    """
    for option in reversed(RUN_OPTIONS):
        command = option(command)
    return command


def _load_config(config_file, out, seed, unit, verbosity):
    return RunConfig(config_file, out_override=out, seed_override=seed, unit_override=unit, verbosity=verbosity)


def _elapsed(config, start_time, what):
    elapsed = datetime.datetime.now(datetime.timezone.utc) - start_time
    config.echo.echo_v(f"{what} in {elapsed.total_seconds()} seconds.")


@click.group()
def entry_point():
    """
    Top level click command for the trajectory prediction tools.
    """


@entry_point.command("synth")
@run_options
def synth(config_file, seed, out, unit, verbosity):
    """
    Generate a synthetic raw record CSV.
    """
    try:
        start_time = datetime.datetime.now(datetime.timezone.utc)
        config = _load_config(config_file, out, seed, unit, verbosity)
        out_dir = config.command_dir("synth")

        records = generate(config.synth)
        records_path = os.path.join(out_dir, "records.csv")
        with open(records_path, "w", newline="") as records_file:
            write_records(records, records_file)

        click.echo(
            f"Wrote {len(records)} records for {config.synth.n_vehicles} vehicles to {records_path}."
        )
        _elapsed(config, start_time, "Generated")
    except Exception as exc:
        _handle_failure(exc)


@entry_point.command("preprocess")
@run_options
@click.option(
    "--records",
    default=None,
    help="Raw record CSV, defaults to <out>/synth/records.csv",
    type=click.Path(dir_okay=False),
)
def preprocess(config_file, seed, out, unit, verbosity, records):
    """
    Build samples from raw records and write the train / validation / test splits.
    """
    try:
        start_time = datetime.datetime.now(datetime.timezone.utc)
        config = _load_config(config_file, out, seed, unit, verbosity)
        records_path = records or os.path.join(config.out, "synth", "records.csv")
        out_dir = config.command_dir("samples")
        data = config.data

        config.echo.echo_v(f"Reading {records_path} in {data.unit}")
        with open(records_path, newline="") as records_file:
            raw_records = normalize_records(parse_records(records_file, data.unit))

        samples = build_samples(
            raw_records,
            history_steps=data.history_steps,
            future_steps=data.future_steps,
            downsample_factor=data.downsample_factor,
            maneuver_window=data.maneuver_window,
            braking_ratio=data.braking_ratio,
        )
        split = split_dataset(samples, data.split_ratios, config.seed)

        for name in SPLITS:
            split_samples = getattr(split, name)
            save_samples(split_samples, os.path.join(out_dir, f"{name}.npz"), config.data_config_hash)
            click.echo(f"{name}: {len(split_samples)} samples")

        click.echo(f"Samples written to {out_dir}.")
        _elapsed(config, start_time, "Preprocessed")
    except Exception as exc:
        _handle_failure(exc)


def _load_split(samples_dir, name, echo):
    path = os.path.join(samples_dir, f"{name}.npz")
    echo.echo_v(f"Loading {path}")
    return load_samples(path)


@entry_point.command("train")
@run_options
@click.option("--samples", default=None, help="Directory with the sample splits, defaults to <out>/samples")
def train(config_file, seed, out, unit, verbosity, samples):
    """
    Train a model and write a run directory with checkpoints and per-epoch losses.
    """
    try:
        start_time = datetime.datetime.now(datetime.timezone.utc)
        config = _load_config(config_file, out, seed, unit, verbosity)
        samples_dir = samples or os.path.join(config.out, "samples")

        train_samples, data_hash = _load_split(samples_dir, "train", config.echo)
        validation_samples, validation_hash = _load_split(samples_dir, "validation", config.echo)
        if validation_hash != data_hash:
            raise CompatibilityError(f"The train and validation splits in {samples_dir} come from different data.")

        run_dir = config.command_dir("run")
        result = train_model(
            DatasetSplit(train=train_samples, validation=validation_samples),
            config.model,
            config.train,
            run_dir=run_dir,
            echo=config.echo,
            data_config_hash=data_hash,
        )

        final = result.history[-1]
        click.echo(
            f"Trained {config.model.variant} model for {len(result.history)} epochs, final training loss "
            f"{final.train_loss:.6f}, best epoch {result.best_epoch}."
        )
        click.echo(f"Run written to {run_dir}.")
        _elapsed(config, start_time, "Trained")
    except Exception as exc:
        _handle_failure(exc)


@entry_point.command("evaluate")
@run_options
@click.option("--samples", default=None, help="Directory with the sample splits, defaults to <out>/samples")
@click.option("--split", default="test", type=click.Choice(SPLITS), show_default=True, help="Split to evaluate on")
@click.option(
    "--checkpoint",
    "checkpoints",
    multiple=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Model checkpoint to evaluate in addition to the configured predictors, may be repeated",
)
def evaluate_command(config_file, seed, out, unit, verbosity, samples, split, checkpoints):
    """
    Measure per-step RMSE of every configured predictor and write the report and CSV files.
    """
    try:
        start_time = datetime.datetime.now(datetime.timezone.utc)
        config = _load_config(config_file, out, seed, unit, verbosity)
        samples_dir = samples or os.path.join(config.out, "samples")
        test_samples, data_hash = _load_split(samples_dir, split, config.echo)

        predictors = config.load_predictors(
            {"name": "model", "checkpoint": path, "batch_size": config.evaluation.batch_size} for path in checkpoints
        )
        reports = [evaluate(predictor, test_samples, data_hash, config.echo)[0] for predictor in predictors]

        out_dir = config.command_dir("evaluation")
        write_report_csv(reports, os.path.join(out_dir, "rmse.csv"))
        renderer = ReportRenderer(reports, config.echo, config.data.unit, config.data.downsample_factor)
        renderer.write(os.path.join(out_dir, "report.txt"))
        renderer.write_per_model_csvs(out_dir)

        click.echo(renderer.render())
        click.echo(f"Report written to {out_dir}.")
        _elapsed(config, start_time, "Evaluated")
    except Exception as exc:
        _handle_failure(exc)


def _parse_sample_id(sample_id):
    try:
        vehicle_id, anchor_frame = (int(part) for part in sample_id.split(":"))
    except ValueError as e:
        raise ConfigurationException(
            f'Sample id "{sample_id}" must look like <vehicle_id>:<anchor_frame>.'
        ) from e
    return vehicle_id, anchor_frame


@entry_point.command("predict")
@run_options
@click.option(
    "--checkpoint",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Model checkpoint to predict with",
)
@click.option("--samples", default=None, help="Sample file, defaults to <out>/samples/test.npz")
@click.option(
    "--sample-id",
    "sample_ids",
    multiple=True,
    help="<vehicle_id>:<anchor_frame> of a sample to predict, may be repeated; every sample if omitted",
)
def predict(config_file, seed, out, unit, verbosity, checkpoint, samples, sample_ids):
    """
    Write predicted future coordinates for selected samples as CSV.
    """
    try:
        config = _load_config(config_file, out, seed, unit, verbosity)
        samples_path = samples or os.path.join(config.out, "samples", "test.npz")
        all_samples, data_hash = load_samples(samples_path)

        predictor = config.load_predictor({"name": "model", "checkpoint": checkpoint})
        if predictor.data_config_hash != data_hash:
            raise CompatibilityError(
                f"Checkpoint {checkpoint} was trained on data config {predictor.data_config_hash[:12]} but "
                f"{samples_path} was built with data config {data_hash[:12]}."
            )

        selected = all_samples
        if sample_ids:
            by_id = {(s.vehicle_id, s.anchor_frame): s for s in all_samples}
            keys = [_parse_sample_id(sample_id) for sample_id in sample_ids]
            missing = [f"{v}:{f}" for v, f in keys if (v, f) not in by_id]
            if missing:
                raise ConfigurationException(f"No sample(s) {', '.join(missing)} in {samples_path}.")
            selected = [by_id[key] for key in keys]

        out_dir = config.command_dir("predict")
        predictions_path = os.path.join(out_dir, "predictions.csv")
        write_predictions_csv(selected, predictor.predict(selected), predictions_path)
        click.echo(f"Wrote predictions for {len(selected)} samples to {predictions_path}.")
    except Exception as exc:
        _handle_failure(exc)


@entry_point.command("export-plot")
@run_options
@click.option(
    "--report",
    "report_files",
    multiple=True,
    type=click.Path(exists=True, dir_okay=False),
    help="RMSE CSV written by evaluate, may be repeated; defaults to <out>/evaluation/rmse.csv",
)
def export_plot(config_file, seed, out, unit, verbosity, report_files):
    """
    Write a CSV of per-step RMSE with one column per model, for external plotting.
    """
    try:
        config = _load_config(config_file, out, seed, unit, verbosity)
        report_files = report_files or (os.path.join(config.out, "evaluation", "rmse.csv"),)
        config.echo(
            "Exporting the following reports: \n{}".format("\n".join(report_files))
        )

        reports = [report for path in report_files for report in read_report_csv(path)]
        out_dir = config.command_dir("plot")
        plot_path = os.path.join(out_dir, "rmse_by_step.csv")
        write_plot_csv(reports, plot_path)
        click.echo(f"Plot data for {len(reports)} models written to {plot_path}.")
    except Exception as exc:
        _handle_failure(exc)


@entry_point.command("selfcheck")
@click.option("--seed", default=0, type=int, show_default=True, help="Seed of the random check cases")
@click.option("-v", "--verbosity", count=True, help="Verbosity level (-v through -vvv)")
def selfcheck(seed, verbosity):
    """
    Run the gradient checks and the masked scatter oracle, exit non-zero on any failure.
    """
    try:
        results = run_selfcheck(seed)
    except Exception as exc:
        _handle_failure(exc)

    for result in results:
        status = "ok" if result.passed else "FAILED"
        click.secho(f"{result.name}: {result.value:.3e} {status}", fg=None if result.passed else "red")

    gradient_errors = [r.value for r in results if not r.name.startswith("masked_scatter")]
    click.echo(f"Max gradient relative error: {max(gradient_errors):.3e}")

    failed = [r.name for r in results if not r.passed]
    if failed:
        fail(f"Self-check failed: {', '.join(failed)}")
    click.echo("Self-check passed.")
