"""Exception hierarchy.  Every error carries a short machine-readable ``code``."""


class RicemapError(Exception):
    code = "error"


class DataError(RicemapError, ValueError):
    """Bad or inconsistent input data (maps to CLI exit status 3)."""

    code = "data_error"


class MissingFileError(DataError, FileNotFoundError):
    code = "missing_file"


class UnsupportedCompressionError(DataError):
    code = "unsupported_compression"


class MissingGeotransformError(DataError):
    code = "missing_geotransform"


class FormatError(DataError):
    """Corrupt container: bad magic, wrong version, or truncated payload."""

    code = "format_error"


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionMismatchError(FormatError):
    code = "version_mismatch"


class TruncatedError(FormatError):
    code = "truncated"


class GridMismatchError(DataError):
    code = "grid_mismatch"


class CRSMismatchError(DataError):
    code = "crs_mismatch"


class ConfigError(RicemapError):
    """Config validation failure; ``errors`` lists every problem found."""

    code = "config_error"

    def __init__(self, errors: list[dict]):
        self.errors = errors
        super().__init__("; ".join(f"{e['field']}: {e['message']}" for e in errors))
