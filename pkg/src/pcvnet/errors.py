"""Exception hierarchy shared across the package.

The three branches map onto the process exit codes used by the CLI and the
HTTP error categories used by the service: configuration problems (exit 2),
data problems (exit 3), and numerical failures (exit 4).
"""


class PcvError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    category = "error"


class ConfigError(PcvError):
    """Invalid or inconsistent run/model configuration."""

    exit_code = 2
    category = "config"


class DataError(PcvError):
    """Bad input data: files, manifests, shapes, labels."""

    exit_code = 3
    category = "data"

    code = "data_error"


class BadMagicError(DataError):
    code = "bad_magic"


class TruncatedPayloadError(DataError):
    code = "truncated_payload"


class ChannelCountError(DataError):
    code = "bad_channel_count"


class MissingFileError(DataError):
    code = "missing_file"


class LabelRangeError(DataError):
    code = "non_contiguous_labels"


class UnknownSplitError(DataError):
    code = "unknown_split"


class NumericalError(PcvError):
    """Non-finite values encountered where finite math was required."""

    exit_code = 4
    category = "numerical"
