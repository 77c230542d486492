"""Frame-level playing-technique detection (C++ core)."""

from ._core import (
    SAMPLE_RATE,
    InputError,
    Model,
    NumericalError,
    evaluate,
    frame_accuracy,
    mel_spectrogram,
    plan_windows,
    read_wav,
    synthesize,
    train,
    write_wav,
)

__all__ = [
    "SAMPLE_RATE",
    "InputError",
    "Model",
    "NumericalError",
    "evaluate",
    "frame_accuracy",
    "mel_spectrogram",
    "plan_windows",
    "read_wav",
    "synthesize",
    "train",
    "write_wav",
]
