"""
Helpers for trajectory_prediction scripts.
"""
import datetime
import errno
import hashlib
import json
import os
import sys
import zipfile
from io import StringIO
from pprint import pprint

import click
import numpy as np

EXIT_CODE_FAILURE = 1
EXIT_CODE_BAD_CONFIG = 2


def fail(msg, exit_code=EXIT_CODE_FAILURE):
    """
    Log the message and exit.

    Args:
        msg: Message to log
        exit_code: Process exit code, 1 for runtime failures and 2 for configuration problems
    """
    click.secho(msg, fg="red")
    sys.exit(exit_code)


class VerboseEcho:
    """
    Helper to handle verbosity-dependent logging.

    Everything echoed, at any verbosity level, can also be mirrored into a sidecar log file with a timestamp on every
    line. The timestamps never reach stdout, so command output stays byte-identical between runs.
    """

    verbosity = 1

    def __init__(self):
        """
        Initialize the echo without a sidecar log.
        """
        self.log_path = None

    def __call__(self, output, **kwargs):
        """
        Echo the given output regardless of verbosity level.

        This is just a convenience method to avoid lots of `self.echo.echo()`.

        Args:
            output: Text to output
            kwargs: Any additional keyword args to pass to click.echo
        """
        self.echo(output, **kwargs)

    def set_verbosity(self, verbosity):
        """
        Override the default verbosity level.

        Args:
            verbosity: The verbosity level to set to
        """
        self.verbosity = verbosity
        self.echo_v(f"Verbosity level set to {verbosity}")

    def attach_log(self, log_path):
        """
        Start mirroring all output into a timestamped sidecar log.

        Args:
            log_path: File to append to, its directory is created if needed
        """
        makedirs(os.path.dirname(os.path.abspath(log_path)))
        with open(log_path, 'a'):
            pass
        self.log_path = log_path

    def detach_log(self):
        """
        Stop mirroring output into the sidecar log.
        """
        self.log_path = None

    def _log(self, output):
        if not self.log_path:
            return
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
        with open(self.log_path, 'a') as log_file:
            for line in str(output).splitlines() or ['']:
                log_file.write(f"{stamp} {line}\n")

    def echo(self, output, verbosity_level=0, **kwargs):
        """
        Echo the given output, if over the verbosity threshold.

        Args:
            output: Text to output
            verbosity_level: Only output if our verbosity level is >= this. The sidecar log gets every line.
            kwargs: Any additional keyword args to pass to click.echo
        """
        if verbosity_level <= self.verbosity:
            click.secho(output, **kwargs)
        self._log(output)

    def echo_v(self, output, **kwargs):
        """
        Echo the given output if verbosity level is >= 1.
        """
        self.echo(output, 1, **kwargs)

    def echo_vv(self, output, **kwargs):
        """
        Echo the given output if verbosity level is >= 2.
        """
        self.echo(output, 2, **kwargs)

    def echo_vvv(self, output, **kwargs):
        """
        Echo the given output if verbosity level is >= 3.
        """
        self.echo(output, 3, **kwargs)

    def pprint(self, data, indent=4, verbosity_level=0):
        """
        Pretty-print some data with the given verbosity level.
        """
        formatted = StringIO()
        pprint(data, indent=indent, stream=formatted)
        formatted.seek(0)
        self.echo(formatted.read(), verbosity_level=verbosity_level)


def config_hash(mapping):
    """
    Hash a configuration mapping so that runs can be tied to the exact settings that produced them.

    Args:
        mapping: JSON-serializable dict (tuples are serialized as lists)

    Returns:
        Hex SHA-256 digest of the canonical JSON form
    """
    canonical = json.dumps(mapping, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def write_npz(file_path, arrays):
    """
    Write arrays to an uncompressed ``.npz`` archive readable by ``numpy.load``.

    Unlike ``numpy.savez`` every member gets a fixed timestamp, so equal arrays always produce equal bytes.

    Args:
        file_path: Destination path, written as given (no suffix is appended)
        arrays: Dict of name -> array, no object arrays
    """
    with zipfile.ZipFile(file_path, 'w', compression=zipfile.ZIP_STORED) as archive:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f'{name}.npy', date_time=(1980, 1, 1, 0, 0, 0))
            with archive.open(info, 'w', force_zip64=True) as member:
                np.lib.format.write_array(member, np.asanyarray(arrays[name]), allow_pickle=False)


def makedirs(path):
    """
    Create a directory and its parents, ignoring the case where it already exists.
    """
    try:
        os.makedirs(path)
    except OSError as e:
        if e.errno != errno.EEXIST:
            raise
