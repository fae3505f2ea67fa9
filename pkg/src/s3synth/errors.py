"""Exception hierarchy shared across the package.

Every error carries a coarse category so the CLI can map failures onto
stable exit codes: config problems exit 2, backend problems exit 3, and
internal invariant violations exit 4.
"""


class S3Error(Exception):
    category = "internal"
    exit_code = 4


class ConfigError(S3Error):
    """Bad user input: task specs, CLI flags, malformed data files."""

    category = "config"
    exit_code = 2


class DataFormatError(ConfigError):
    """A dataset or scenario file failed to parse or validate."""


class BackendError(S3Error):
    """The generation backend or an external trainer failed."""

    category = "backend"
    exit_code = 3


class AuthError(BackendError):
    pass


class RateLimitError(BackendError):
    pass


class BackendTimeoutError(BackendError):
    pass


class OracleMatchError(BackendError):
    """No scripted rule (and no distributional fallback) matched a prompt."""


class RationaleParseError(BackendError):
    """Could not extract the requested number of rationale phrases."""


class TrainerProtocolError(BackendError):
    """An external trainer subprocess broke the wire protocol."""


class InvariantError(S3Error):
    """An internal consistency check failed; indicates a bug."""
