"""
Stevedore extension serving predictions from a trained checkpoint.
"""
import numpy as np

from trajectory_prediction.exceptions import ConfigurationException
from trajectory_prediction.extensions.base import BasePredictor
from trajectory_prediction.model import forward, load_checkpoint


class CheckpointPredictor(BasePredictor):
    """
    Run the hybrid model, or its naive_lstm variant, from a checkpoint file.

    The variant comes from the checkpoint's model config; there is no separate code path per variant.
    """

    extension_name = 'model'
    option_names = BasePredictor.option_names + ('checkpoint', 'batch_size')

    def __init__(self, options, echo):
        """
        Load the checkpoint named by the ``checkpoint`` option.

        Raises:
            ConfigurationException when no checkpoint is configured
        """
        if not options.get('checkpoint'):
            raise ConfigurationException('Predictor "model" needs a "checkpoint" option.')
        self.checkpoint = load_checkpoint(options['checkpoint'])
        super().__init__(options, echo)
        self.horizon = self.checkpoint.config.horizon
        self.batch_size = int(options.get('batch_size', 256))
        self.data_config_hash = self.checkpoint.data_config_hash
        self.echo.echo_v(
            f'Loaded {self.checkpoint.config.variant} checkpoint {options["checkpoint"]} '
            f'({self.checkpoint.params.size} parameters)'
        )

    def default_tag(self):
        return self.checkpoint.config.variant

    def predict(self, samples):
        config = self.checkpoint.config
        if not samples:
            return np.zeros((0, config.horizon, 2))
        return np.concatenate([
            forward(samples[start:start + self.batch_size], self.checkpoint.params, config)
            for start in range(0, len(samples), self.batch_size)
        ])
