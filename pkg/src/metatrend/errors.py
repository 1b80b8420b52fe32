"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for every error this package raises deliberately."""


class MarketDataError(PipelineError):
    """Bad input file or a bar violating price invariants."""


class ConfigError(PipelineError):
    """Invalid or inconsistent run configuration."""


class DatasetError(PipelineError):
    """Dataset construction or file-format failure."""


class ModelError(PipelineError):
    """Model construction, congruence, or parameter-file failure."""


class DivergenceError(PipelineError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ArtifactMissingError(PipelineError):
    """A required upstream artifact is absent; names the subcommand that produces it."""

    def __init__(self, path, producer: str):
        super().__init__(
            f"missing artifact {path}: run the `{producer}` subcommand first"
        )
        self.path = path
        self.producer = producer


class ArtifactMismatchError(PipelineError):
    """Artifacts from different config hashes were mixed in one step."""
