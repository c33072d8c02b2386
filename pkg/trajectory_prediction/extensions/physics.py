"""
Stevedore extensions for kinematic extrapolation baselines.
"""
import numpy as np

from trajectory_prediction.evaluation import averaged_velocity_predict, constant_velocity_predict
from trajectory_prediction.extensions.base import BasePredictor


class ConstantVelocityPredictor(BasePredictor):
    """
    Extrapolate the last observed displacement.
    """

    extension_name = 'constant_velocity'

    def predict(self, samples):
        return np.array([constant_velocity_predict(s.target_history, self.horizon) for s in samples])


class AveragedVelocityPredictor(BasePredictor):
    """
    Extrapolate the mean displacement over the last ``velocity_window`` history steps.
    """

    extension_name = 'averaged_velocity'
    option_names = BasePredictor.option_names + ('velocity_window',)

    def __init__(self, options, echo):
        super().__init__(options, echo)
        self.velocity_window = int(options.get('velocity_window', 3))

    def predict(self, samples):
        return np.array([
            averaged_velocity_predict(s.target_history, self.horizon, self.velocity_window) for s in samples
        ])
