"""Exception hierarchy shared by every module."""


class WaveNetError(Exception):
    """Base class for all library errors."""


class DomainError(WaveNetError, ValueError):
    """A scalar argument lies outside the domain of a transform."""


class ShapeError(WaveNetError, ValueError):
    pass


class ConfigError(WaveNetError, ValueError):
    pass


class DataError(WaveNetError, ValueError):
    pass


class StateError(WaveNetError, RuntimeError):
    pass


class FormatError(WaveNetError, ValueError):
    """File header or layout is not what the reader expects."""


class IntegrityError(WaveNetError, ValueError):
    """File is truncated or fails its checksum."""


class TrainingAborted(WaveNetError, RuntimeError):
    pass
