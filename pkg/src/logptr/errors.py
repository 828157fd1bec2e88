"""Exception hierarchy shared by every stage of the pipeline."""


class LogPtrError(Exception):
    """Base class; ``code`` is the CLI exit status associated with the error."""

    code = 1


class IngestError(LogPtrError):
    code = 2


class MissingColumn(IngestError):
    def __init__(self, column: str):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class MalformedRow(IngestError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"malformed row {row}: {reason}")
        self.row = row


class UnknownLabel(IngestError):
    def __init__(self, label: str, row: int | None = None):
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"unknown label {label!r}{where}")
        self.label = label
        self.row = row


class EmptyMessage(IngestError):
    def __init__(self):
        super().__init__("message is empty after trimming whitespace")


class AlignmentFailure(IngestError):
    def __init__(self, token: str, cursor: int):
        super().__init__(f"cannot align template token {token!r} at message position {cursor}")
        self.token = token
        self.cursor = cursor


class TooFewRecords(IngestError):
    pass


class IndexOutOfRange(LogPtrError):
    pass


class TargetTooSmall(LogPtrError):
    pass


class ShapeMismatch(LogPtrError):
    pass


class AllMasked(LogPtrError):
    pass


class NumericError(LogPtrError):
    """A primitive produced NaN or Inf from finite inputs."""

    code = 3


class EmptyTrainSet(LogPtrError):
    pass


class ModelFileError(LogPtrError):
    pass


class BadMagic(ModelFileError):
    pass


class VersionMismatch(ModelFileError):
    def __init__(self, found: int, supported: int):
        super().__init__(f"model file format version {found} is not supported (this build reads version {supported})")
        self.found = found
        self.supported = supported


class ChecksumMismatch(ModelFileError):
    pass


class TruncatedFile(ModelFileError):
    pass


class EmptyCorpus(LogPtrError):
    pass


class TooFewDatasets(LogPtrError):
    pass


class ConfigError(LogPtrError):
    pass
