"""Exception hierarchy shared across the package.

Validation-type errors (bad shapes, bad config, malformed files) map to CLI
exit code 1; :class:`TrainingDivergedError` and other runtime failures map
to exit code 2.
"""


class PsclapError(Exception):
    """Base class for all package errors."""

    module = "psclap"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class ShapeError(PsclapError, ValueError):
    module = "numcore"


class DegenerateInputError(PsclapError, ValueError):
    module = "numcore"


class ContractError(PsclapError, ValueError):
    module = "numcore"


class DegenerateEmbeddingError(PsclapError, ValueError):
    module = "losses"


class VocabularyError(PsclapError, ValueError):
    module = "encoders"


class ConfigurationError(PsclapError, ValueError):
    module = "config"


class CorpusLoadError(PsclapError, ValueError):
    module = "corpus"


class GenerationError(PsclapError, ValueError):
    module = "corpus"


class CheckpointError(PsclapError, ValueError):
    module = "trainer"


class EvaluationError(PsclapError, ValueError):
    module = "eval"


class TrainingDivergedError(PsclapError, RuntimeError):
    module = "trainer"
