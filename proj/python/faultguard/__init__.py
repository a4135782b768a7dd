"""Python access to the FaultGuard core."""

from ._core import (
    NUM_FEATURES,
    WINDOW_LEN,
    ConfigError,
    DataError,
    Error,
    ExperimentConfig,
    ShapeError,
    asr_from_predictions,
    combinatorial_accuracy,
    false_alarm_probability,
    project,
    run_pipeline,
    synth_dataset,
)

__all__ = [
    "NUM_FEATURES",
    "WINDOW_LEN",
    "ConfigError",
    "DataError",
    "Error",
    "ExperimentConfig",
    "ShapeError",
    "asr_from_predictions",
    "combinatorial_accuracy",
    "false_alarm_probability",
    "project",
    "run_pipeline",
    "synth_dataset",
]
