"""
Human-readable RMSE reports.
"""
import os

import importlib_resources
import jinja2
from slugify import slugify

from trajectory_prediction.data_pipeline import FRAME_SECONDS
from trajectory_prediction.evaluation import write_report_csv
from trajectory_prediction.exceptions import ShapeError

TEMPLATE_DIR = importlib_resources.files('trajectory_prediction') / os.path.join('contrib', 'templates')


class ReportRenderer:
    """
    Renders RmseReports as a table with one row per model and one column per prediction step.
    """

    def __init__(self, reports, echo, unit='meters', downsample_factor=2, template_dir=None):
        """
        Initialize a ReportRenderer.

        Args:
            reports: RmseReport objects, rendered in the given order
            echo: VerboseEcho object used for logging
            unit: Length unit of the RMSE values
            downsample_factor: Raw frames per prediction step, used to label the step duration
            template_dir: Directory holding ``rmse_table.tpl``, defaults to the bundled templates
        """
        self.reports = list(reports)
        self.echo = echo
        self.unit = unit
        self.step_seconds = round(FRAME_SECONDS * downsample_factor, 6)

        self.jinja_environment = jinja2.Environment(
            autoescape=False,
            loader=jinja2.FileSystemLoader(str(template_dir or TEMPLATE_DIR)),
            lstrip_blocks=True,
            trim_blocks=True,
            keep_trailing_newline=True,
        )
        self.table_template = self.jinja_environment.get_template('rmse_table.tpl')

    def render(self):
        """
        Render the table to a string.
        """
        steps = range(1, max((len(r.per_step) for r in self.reports), default=0) + 1)
        return self.table_template.render(
            reports=self.reports,
            steps=steps,
            tag_width=max([len('Model')] + [len(r.model_tag) for r in self.reports]),
            unit=self.unit,
            step_seconds=self.step_seconds,
        )

    def write(self, file_path):
        """
        Write the rendered table.
        """
        self.echo.echo_v(f'Writing {file_path}')
        with open(file_path, 'w') as output:
            output.write(self.render())

    def write_per_model_csvs(self, directory):
        """
        Write one ``rmse-<model tag slug>.csv`` per report.

        Returns:
            List of written paths

        Raises:
            ShapeError if two tags share a slug
        """
        paths = []
        for report in self.reports:
            path = os.path.join(directory, f'rmse-{slugify(report.model_tag)}.csv')
            if path in paths:
                raise ShapeError(f'Model tag "{report.model_tag}" would overwrite {path}.')
            self.echo.echo_vv(f'Writing {path}')
            write_report_csv([report], path)
            paths.append(path)
        return paths
