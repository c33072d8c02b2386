"""
Run configuration shared by every trajectory_prediction command.
"""
import dataclasses
import os

import yaml
from stevedore import driver
from stevedore.exception import NoMatches

from trajectory_prediction.data_pipeline import DataConfig
from trajectory_prediction.exceptions import ConfigurationException, TrajectoryPredictionError
from trajectory_prediction.helpers import VerboseEcho, config_hash, makedirs
from trajectory_prediction.model import ModelConfig
from trajectory_prediction.synth_data import SynthConfig
from trajectory_prediction.training import TrainConfig

PREDICTOR_NAMESPACE = 'trajectory_prediction.predictors'
TOP_LEVEL_KEYS = ('seed', 'out', 'synth', 'data', 'model', 'train', 'evaluation')
EFFECTIVE_CONFIG_FILE = 'effective_config.yaml'
LOG_FILE = 'run.log'


@dataclasses.dataclass(frozen=True)
class EvaluationConfig:
    """
    Predictors to evaluate, each a dict with a plugin ``name`` and that plugin's options.
    """

    predictors: tuple = ({'name': 'constant_velocity'},)
    batch_size: int = 256

    def __post_init__(self):
        """
        Validate the predictor list.

        Raises:
            ConfigurationException if an entry is not a mapping with a name
        """
        predictors = tuple(dict(p) if isinstance(p, dict) else p for p in self.predictors)
        for entry in predictors:
            if not isinstance(entry, dict) or not entry.get('name'):
                raise ConfigurationException(f'Every evaluation.predictors entry needs a "name", got {entry!r}.')
        object.__setattr__(self, 'predictors', predictors)
        if int(self.batch_size) < 1:
            raise ConfigurationException(f'evaluation.batch_size must be at least 1, not {self.batch_size}.')

    def to_dict(self):
        return {'predictors': [dict(p) for p in self.predictors], 'batch_size': self.batch_size}


SECTIONS = {
    'synth': SynthConfig,
    'data': DataConfig,
    'model': ModelConfig,
    'train': TrainConfig,
    'evaluation': EvaluationConfig,
}


class RunConfig:
    """
    Configuration shared among all trajectory_prediction commands.
    """

    def __init__(self, config_file_path=None, out_override=None, seed_override=None, unit_override=None,
                 verbosity=1):
        """
        Load and validate a YAML run configuration.

        Args:
            config_file_path: Path to the configuration file, or None for the built-in defaults
            out_override: Output directory, if overridden on the command line
            seed_override: Seed, if overridden on the command line; replaces every section seed
            unit_override: Length unit of the raw records, if overridden on the command line
            verbosity: Verbosity level from the command line
        """
        # Global logger, other objects can hold handles to this
        self.echo = VerboseEcho()
        self.echo.set_verbosity(verbosity)
        self.verbosity = verbosity

        raw_config = {}
        if config_file_path:
            try:
                with open(config_file_path) as config_file:
                    raw_config = yaml.safe_load(config_file) or {}
            except (OSError, yaml.YAMLError) as e:
                raise ConfigurationException(f'Could not read configuration file {config_file_path}: {e}') from e
        self._check_raw_config_keys(raw_config)

        self.seed = int(raw_config.get('seed', 0) if seed_override is None else seed_override)
        self.out = out_override or raw_config.get('out') or 'output'
        self.echo(f'Configured for output directory: {self.out}')

        sections = {}
        for name in SECTIONS:
            section = dict(raw_config.get(name) or {})
            if name in ('synth', 'train') and (seed_override is not None or 'seed' not in section):
                section['seed'] = self.seed
            if name == 'data' and unit_override:
                section['unit'] = unit_override
            if name == 'model':
                self._fill_sequence_lengths(section, sections['data'])
            sections[name] = self._build_section(name, section)

        self.synth = sections['synth']
        self.data = sections['data']
        self.model = sections['model']
        self.train = sections['train']
        self.evaluation = sections['evaluation']

    def _check_raw_config_keys(self, raw_config):
        """
        Reject unknown top-level keys and non-mapping sections.

        Raises:
            ConfigurationException listing the offending keys
        """
        if not isinstance(raw_config, dict):
            raise ConfigurationException('The configuration file must contain a mapping at the top level.')

        unknown = sorted(str(k) for k in raw_config if k not in TOP_LEVEL_KEYS)
        if unknown:
            raise ConfigurationException(
                'The following keys in the configuration file are not recognized: \n{}'.format('\n'.join(unknown))
            )

        for name in SECTIONS:
            if raw_config.get(name) is not None and not isinstance(raw_config[name], dict):
                raise ConfigurationException(f'Configuration section "{name}" must be a mapping.')

    @staticmethod
    def _fill_sequence_lengths(model_section, data_config):
        """
        Take the model's history and horizon lengths from the data section.

        Raises:
            ConfigurationException if the model section sets different lengths
        """
        for model_key, data_key in (('history_steps', 'history_steps'), ('horizon', 'future_steps')):
            expected = getattr(data_config, data_key)
            model_section.setdefault(model_key, expected)
            if model_section[model_key] != expected:
                raise ConfigurationException(
                    f'model.{model_key} ({model_section[model_key]}) must match data.{data_key} ({expected}).'
                )

    def _build_section(self, name, values):
        """
        Turn one section into its dataclass.

        Raises:
            ConfigurationException on unknown keys or invalid values
        """
        section_class = SECTIONS[name]
        known = {f.name for f in dataclasses.fields(section_class)}
        unknown = sorted(str(k) for k in values if k not in known)
        if unknown:
            raise ConfigurationException(
                'The following keys in section "{}" are not recognized: \n{}'.format(name, '\n'.join(unknown))
            )
        try:
            return section_class(**values)
        except (TypeError, ValueError) as e:
            raise ConfigurationException(f'Invalid value in section "{name}": {e}') from e

    @property
    def data_config_hash(self):
        """
        Hash of the data section and the seed, stamped into sample files and checkpoints.
        """
        return config_hash({'data': self.data.to_dict(), 'seed': self.seed})

    def to_dict(self):
        return {
            'seed': self.seed,
            'out': self.out,
            'synth': self.synth.to_dict(),
            'data': self.data.to_dict(),
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
            'evaluation': self.evaluation.to_dict(),
        }

    def command_dir(self, name):
        """
        Create and return ``<out>/<name>``, write the effective configuration there and start the sidecar log.
        """
        path = os.path.join(self.out, name)
        makedirs(path)
        with open(os.path.join(path, EFFECTIVE_CONFIG_FILE), 'w') as effective:
            yaml.safe_dump(self.to_dict(), effective, default_flow_style=False, sort_keys=True)
        self.echo.attach_log(os.path.join(path, LOG_FILE))
        self.echo.echo_v(f'Writing {name} outputs to {path}')
        self.echo.pprint(self.to_dict(), verbosity_level=2)
        return path

    def _plugin_load_failed_handler(self, manager, entrypoint, exception):
        """
        Handle failures to load a predictor plugin. Errors raised by the plugin itself are passed through.

        Raises:
            ConfigurationException
        """
        self.echo(f'Failed to load predictor plugin {entrypoint.name}: {exception}', fg='red')
        if isinstance(exception, TrajectoryPredictionError):
            raise exception
        raise ConfigurationException('Failed to load a predictor plugin, aborting.') from exception

    def load_predictor(self, options):
        """
        Load one predictor plugin through stevedore.

        Args:
            options: Dict with the plugin ``name`` and the plugin's options
        """
        options = dict(options)
        name = options.pop('name')
        try:
            mgr = driver.DriverManager(
                namespace=PREDICTOR_NAMESPACE,
                name=name,
                invoke_on_load=True,
                on_load_failure_callback=self._plugin_load_failed_handler,
                invoke_args=(options, self.echo),
            )
        except NoMatches as e:
            raise ConfigurationException(f'No predictor plugin named "{name}" is installed.') from e
        self.echo.echo_vv(f'Loaded predictor plugin {name} as {mgr.driver.model_tag}')
        return mgr.driver

    def load_predictors(self, extra=()):
        """
        Load every configured predictor plus any ``extra`` option dicts.

        Report rows are keyed by tag, so tags must be unique. A default tag that is already taken gets a ``-2``,
        ``-3``, ... suffix; an explicit ``tag`` that is already taken is an error.

        Raises:
            ConfigurationException on a repeated explicit tag
        """
        predictors = []
        taken = set()
        for options in tuple(self.evaluation.predictors) + tuple(extra):
            predictor = self.load_predictor(options)
            tag = predictor.model_tag
            if tag in taken:
                if options.get('tag'):
                    raise ConfigurationException(f'Predictor tag "{tag}" is used more than once.')
                suffix = 2
                while f'{tag}-{suffix}' in taken:
                    suffix += 1
                predictor.model_tag = f'{tag}-{suffix}'
                self.echo.echo_v(f'Predictor tag {tag} is taken, reporting {options["name"]} as {predictor.model_tag}')
            taken.add(predictor.model_tag)
            predictors.append(predictor)
        return predictors
