"""Error types with stable machine-readable kinds for the CLI surface."""


class EngineError(Exception):
    """Base error; `kind` is the stable one-word category used in CLI output."""

    kind = "generic"

    def __init__(self, message):
        super().__init__(message)
        self.message = message


class ShapeError(EngineError):
    kind = "shape"


class ValueRangeError(EngineError):
    kind = "value"


class NonFiniteError(EngineError):
    kind = "non-finite"


class ManifestError(EngineError):
    kind = "manifest"


class CodecError(EngineError):
    kind = "codec"


class CodecMagicError(CodecError):
    kind = "codec-magic"


class CodecMaxvalError(CodecError):
    kind = "codec-maxval"


class CodecTruncatedError(CodecError):
    kind = "codec-truncated"


class CheckpointError(EngineError):
    kind = "checkpoint"


class CheckpointMagicError(CheckpointError):
    kind = "checkpoint-magic"


class CheckpointShapeError(CheckpointError):
    kind = "checkpoint-shape"


class CheckpointTruncatedError(CheckpointError):
    kind = "checkpoint-truncated"


class ConfigError(EngineError):
    kind = "config"


class TrainingDivergedError(EngineError):
    kind = "nan-loss"
