"""
Custom exceptions for trajectory_prediction.
"""


class TrajectoryPredictionError(Exception):
    """
    Base class for every error raised by this package.
    """


class ConfigurationException(TrajectoryPredictionError):
    """
    Exception specific to run configuration problems.
    """


class CompatibilityError(TrajectoryPredictionError):
    """
    A checkpoint or sample file does not belong to the data it is used with.
    """


class RecordParseError(TrajectoryPredictionError):
    """
    A raw record file could not be parsed.
    """


class InvalidLaneError(TrajectoryPredictionError):
    """
    A lane id outside the valid range was found.
    """


class WindowUnavailableError(TrajectoryPredictionError):
    """
    The look-back or look-ahead window of a maneuver label falls outside the trajectory.
    """


class SplitInfeasibleError(TrajectoryPredictionError):
    """
    There are not enough distinct vehicles to build a train/validation/test split.
    """


class IntegrityError(TrajectoryPredictionError):
    """
    A sample violates the occupancy grid invariants.
    """


class ShapeError(TrajectoryPredictionError):
    """
    Array shapes do not agree with each other or with the model configuration.
    """


class EmptySequenceError(ShapeError):
    """
    A recurrent encoder was asked to encode a sequence with no timesteps.
    """


class NumericError(TrajectoryPredictionError):
    """
    A non-finite value showed up where only finite values are allowed.
    """


class EmptyEvaluationError(TrajectoryPredictionError):
    """
    An evaluation was requested over zero samples.
    """


class DivergenceError(NumericError):
    """
    Training produced a non-finite loss.
    """
