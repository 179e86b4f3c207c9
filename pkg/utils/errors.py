"""Exception hierarchy shared by every layer of the toolkit.

Each class carries the CLI exit code it maps to; library code raises them and lets
them propagate.
"""


class ReplabError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 1


class ConfigurationError(ReplabError):
    """Invalid experiment, environment or agent configuration"""
    exit_code = 2


class UsageError(ReplabError):
    """An operation was called in a state or with arguments it does not accept"""
    exit_code = 2


class NumericalError(ReplabError):
    """A tensor, loss or action-value vector became non-finite"""
    exit_code = 3


class CheckpointError(ReplabError):
    """Checkpoint file is missing, truncated, inconsistent or fails its digest"""
    exit_code = 2


class ArchitectureMismatchError(CheckpointError):
    """Checkpoint tensors do not match the architecture the config asks for"""
    exit_code = 2


class DuplicateKeyError(ReplabError):
    """A result-store row reuses a key that is already present"""
    exit_code = 2


class RerunError(ReplabError):
    """A sub-run kept failing after its re-run budget was spent"""
    exit_code = 1

