"""Exception hierarchy shared across the package."""


class SpeechPrefixError(Exception):
    """Base class for all package errors."""


class ShapeError(SpeechPrefixError, ValueError):
    pass


class NonFiniteError(SpeechPrefixError, FloatingPointError):
    pass


class ContractError(SpeechPrefixError, ValueError):
    """A caller violated an operation's precondition."""


class ValidationError(SpeechPrefixError, ValueError):
    pass


class AudioError(SpeechPrefixError, ValueError):
    pass


class UnsupportedRateError(AudioError):
    pass


class UnsupportedChannelsError(AudioError):
    pass


class EmptyAudioError(AudioError):
    pass


class TooShortError(AudioError):
    pass


class TruncationError(SpeechPrefixError, ValueError):
    pass


class CheckpointError(SpeechPrefixError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


class UndefinedCorrelationError(SpeechPrefixError, ValueError):
    pass


class NoEvaluableExamplesError(SpeechPrefixError, ValueError):
    pass
