"""Exception hierarchy shared across the package.

Errors are grouped so the CLI can map them onto exit codes:
usage problems -> 1, data problems -> 2, numeric failures -> 3.
"""


class RobustSpeechError(Exception):
    """Base class for all package errors."""


class UsageError(RobustSpeechError):
    """Bad invocation: missing files, unknown config keys, invalid flags."""


class DataError(RobustSpeechError):
    """Invalid or inconsistent input data."""


class NumericError(RobustSpeechError):
    """Numeric failure during computation (non-finite losses etc.)."""


# -- data errors ------------------------------------------------------------

class SilentInput(DataError):
    """A clip (or the cut noise segment) has zero power."""


class RateMismatch(DataError):
    """Two clips that must share a sample rate do not."""


class EmptyManifest(DataError):
    """A manifest required to be non-empty has no entries."""


class ManifestError(DataError):
    """A manifest violates its invariants (duplicate ids, missing files...)."""


class DegenerateChannel(DataError):
    """A channel has zero variance, so correlation is undefined."""


class LengthMismatch(DataError):
    """Paired sequences differ in length."""


class MissingTranscript(DataError):
    """Fine-tuning/evaluation entry lacks a transcript."""


class EmptyGrid(DataError):
    """A tuning grid has no points."""


class EmptyReference(DataError):
    """WER reference has no words."""


# -- model errors -----------------------------------------------------------

class TooShort(DataError):
    """Waveform shorter than the encoder's minimum receptive field."""


class AttachmentMismatch(RobustSpeechError):
    """Reconstruction input site disagrees with the configured attachment."""


class ZeroVector(NumericError):
    """Cosine similarity requested on a zero-norm vector."""


class NotADistribution(NumericError):
    """Codebook usage row does not sum to one (or has negative entries)."""


class NonFiniteLoss(NumericError):
    """Training produced NaN/Inf; aborts with a diagnostics dump."""


class ConfigMismatch(RobustSpeechError):
    """Checkpoint architecture incompatible with the requested model."""


class InfeasibleAlignment(NumericError):
    """Transcript cannot be aligned: too few frames for the label sequence."""
