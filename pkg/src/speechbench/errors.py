"""Exception taxonomy shared across the bench."""


class BenchError(Exception):
    """Base class for all domain errors raised by this package."""


class WavReadError(BenchError):
    """RIFF/WAVE container is malformed (bad magic, truncated chunks)."""


class UnsupportedCodecError(BenchError):
    """WAV file uses a codec other than PCM16 or IEEE float32."""


class SilentSignalError(BenchError):
    """SNR is undefined because signal or noise has zero RMS."""


class SampleRateMismatchError(BenchError):
    """Two waveforms that must share a sample rate do not."""


class AugmentConfigError(BenchError):
    """Augmentation parameter outside its configured range."""


class SignalTooShortError(BenchError):
    """Waveform too short for the requested operation."""


class EmbeddingFormatError(BenchError):
    """Embedding file violates the binary layout (magic, dims, payload)."""


class DuplicateClipError(BenchError):
    """clip_id already present in the store or manifest."""


class UnknownClipError(BenchError):
    """clip_id not present in the store or manifest."""


class ManifestError(BenchError):
    """Corpus manifest violates its schema or invariants."""


class ShapeError(BenchError):
    """Tensor shapes inconsistent with the configured head dimensions."""


class TrainingError(BenchError):
    """Training cannot proceed (empty balance cell, NaN loss, bad config)."""


class EvalError(BenchError):
    """Metric computation over an invalid input (empty records, bad margin)."""


class AssignmentError(BenchError):
    """Listening-test assignment cannot be built from the manifest."""


class CheckpointError(BenchError):
    """Head checkpoint file is malformed or inconsistent."""
