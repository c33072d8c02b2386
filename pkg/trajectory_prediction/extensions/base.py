"""
Abstract base class for predictor plugins.
"""
from abc import ABCMeta, abstractmethod

from trajectory_prediction.exceptions import ConfigurationException


class BasePredictor(metaclass=ABCMeta):
    """
    Abstract base class that predictor plugins will inherit from.

    A predictor maps a list of TrajectorySample to a ``(N, horizon, 2)`` array of future positions in the samples'
    relative frame.
    """

    extension_name = None

    # Options a plugin accepts in its evaluation.predictors entry, besides "name"
    option_names = ('tag', 'horizon')

    def __init__(self, options, echo):
        """
        Initialize this base object, validate and save the plugin options.

        Args:
            options: Dict of plugin options from the run configuration
            echo: VerboseEcho object used for logging

        Raises:
            ConfigurationException on unknown options
        """
        unknown = sorted(set(options) - set(self.option_names))
        if unknown:
            raise ConfigurationException(
                f'Predictor "{self.extension_name}" does not accept option(s): {", ".join(unknown)}.'
            )
        self.options = options
        self.echo = echo
        self.model_tag = str(options.get('tag') or self.default_tag())
        self.horizon = int(options.get('horizon', 5))

        # Empty for predictors that do not depend on the data they were built with
        self.data_config_hash = ''

    def default_tag(self):
        return self.extension_name

    @abstractmethod
    def predict(self, samples):  # pragma: no cover
        """
        Predict future positions for the given samples.
        """
        raise NotImplementedError('predict called on base class!')
