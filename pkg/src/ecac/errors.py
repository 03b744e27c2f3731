"""Exception taxonomy shared by all modules."""


class EcacError(Exception):
    """Base class for all library errors."""


class DimensionError(EcacError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(EcacError):
    """A computation produced or received a non-finite value."""


class ContractError(EcacError):
    """A caller violated an operation's contract (wrong rank, bad step, ...)."""


class LabelRangeError(EcacError):
    """A label value falls outside [0, n_classes) and is not the ignore sentinel."""


class EmptySupervisionError(EcacError):
    """Every pixel of the supervision target is ignored."""


class FrequencyError(EcacError):
    """A class frequency is non-positive."""


class RoleError(EcacError):
    """A head of the wrong role (teacher vs student) was supplied."""


class ScheduleError(EcacError):
    """An iteration index lies outside the configured schedule."""


class ConfigError(EcacError):
    """Experiment configuration could not be parsed or validated."""


class CheckpointError(EcacError):
    """A checkpoint file is unreadable, truncated, or shape-incompatible."""
