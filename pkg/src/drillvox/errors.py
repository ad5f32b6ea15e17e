"""Exception hierarchy shared across the package.

Each class maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class DrillvoxError(Exception):
    """Base class for all package errors."""


class ParseError(DrillvoxError):
    """Malformed input file or field."""


class UnsupportedFeatureError(DrillvoxError):
    """Input uses a feature deliberately out of scope (e.g. NRRD hex encoding)."""


class TruncationError(DrillvoxError):
    """Payload shorter than the header promises."""


class ConflictError(DrillvoxError):
    """Contradictory metadata (e.g. duplicate segment label values)."""


class ContractViolation(DrillvoxError):
    """Caller broke a documented precondition."""


class OrderingError(DrillvoxError):
    """Event timestamps regressed."""


class StateError(DrillvoxError):
    """Operation on a closed or not-yet-opened object."""


class CorruptionError(DrillvoxError):
    """Checksum mismatch in a stored file."""


class IncompleteRecordingError(DrillvoxError):
    """A batch file listed in the manifest is missing."""


class WrongAnatomyError(DrillvoxError):
    """Recording's anatomy digest does not match the supplied volume."""


class InsufficientDataError(DrillvoxError):
    """Not enough samples to compute a requested statistic."""


class ValidationError(DrillvoxError):
    """Structured input (trajectory, config) failed validation."""


class DegenerateNormalError(DrillvoxError):
    """Accumulated gradient was zero and no fallback was permitted."""
