"""Exception hierarchy shared across the simulator."""


class KdnsimError(Exception):
    """Base class for all simulator errors."""


class InvalidParameterError(KdnsimError):
    """A numeric argument or config field is outside its allowed range."""


class IntegrityError(KdnsimError):
    """Referential breakage in network state (e.g. dangling serving station)."""


class InvalidTelemetryError(KdnsimError):
    """A telemetry sample contains NaN or otherwise unusable values."""


class TableFormatError(KdnsimError):
    """A Q-table file is unreadable, truncated, or has a bad header."""


class IncompatibleTableError(KdnsimError):
    """A Q-table file does not match the expected geometry or binning."""


class ScenarioError(KdnsimError):
    """A scenario file failed to parse or violates a constraint."""


class ProtocolError(KdnsimError):
    """A bridge peer violated the wire protocol."""
