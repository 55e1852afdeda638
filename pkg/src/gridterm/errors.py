"""Exception hierarchy. Each family maps to one CLI exit code."""


class GridtermError(Exception):
    exit_code = 1
    stage = None


class ConfigError(GridtermError):
    exit_code = 2


class DataError(GridtermError):
    exit_code = 3


class ModelError(GridtermError):
    exit_code = 4


# capture / packet decoding
class PcapError(DataError):
    pass


class BadMagic(PcapError):
    pass


class TruncatedHeader(PcapError):
    pass


class TruncatedRecord(PcapError):
    def __init__(self, message, records_ok=0):
        super().__init__(message)
        self.records_ok = records_ok


class MalformedPacket(PcapError):
    pass


class InvalidParams(ConfigError):
    pass


class EmptyInput(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class AlignmentError(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MissingLabel(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class SingleClass(DataError):
    pass


class BadProfile(ConfigError):
    pass


class BadShape(ModelError):
    pass


class NonFinite(ModelError):
    pass


class TooFewRows(ModelError):
    pass


class DegenerateComponent(ModelError):
    pass


class UnknownKind(ConfigError):
    pass


class VersionMismatch(ModelError):
    pass


class CorruptArtifact(ModelError):
    pass
