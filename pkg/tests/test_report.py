"""
Tests for trajectory_prediction/report.py
"""
import os

import pandas as pd

from trajectory_prediction.evaluation import RmseReport
from trajectory_prediction.helpers import VerboseEcho
from trajectory_prediction.report import ReportRenderer

REPORTS = [
    RmseReport('full', (0.1, 0.25, 0.5, 0.75, 1.0), 120),
    RmseReport('Naive LSTM / ablation', (0.2, 0.4, 0.8, 1.2, 1.6), 120),
]


def test_render_table():
    text = ReportRenderer(REPORTS, VerboseEcho()).render()
    lines = text.splitlines()

    assert lines[0] == 'RMSE per prediction step (0.2 s per step, meters)'
    header = lines[2].split()
    assert header[0] == 'Model'
    assert header[1:3] == ['Step', '1']
    assert header[-2:] == ['Mean', 'Samples']
    assert set(lines[3]) == {'-'}

    full_row = lines[4].split()
    assert full_row == ['full', '0.1000', '0.2500', '0.5000', '0.7500', '1.0000', '0.5200', '120']
    assert lines[5].startswith('Naive LSTM / ablation  ')
    assert lines[5].split()[-2:] == ['0.8400', '120']


def test_render_columns_line_up():
    lines = ReportRenderer(REPORTS, VerboseEcho()).render().splitlines()
    assert len(lines[2]) == len(lines[3]) == len(lines[4]) == len(lines[5])


def test_render_unit_and_step_duration():
    text = ReportRenderer(REPORTS[:1], VerboseEcho(), unit='feet', downsample_factor=5).render()
    assert text.startswith('RMSE per prediction step (0.5 s per step, feet)')


def test_write(tmp_path):
    path = str(tmp_path / 'report.txt')
    renderer = ReportRenderer(REPORTS, VerboseEcho())
    renderer.write(path)
    with open(path) as report_file:
        assert report_file.read() == renderer.render()


def test_write_per_model_csvs(tmp_path):
    paths = ReportRenderer(REPORTS, VerboseEcho()).write_per_model_csvs(str(tmp_path))
    assert [os.path.basename(p) for p in paths] == ['rmse-full.csv', 'rmse-naive-lstm-ablation.csv']

    frame = pd.read_csv(paths[1])
    assert set(frame['model_tag']) == {'Naive LSTM / ablation'}
    assert list(frame['rmse']) == [0.2, 0.4, 0.8, 1.2, 1.6]
