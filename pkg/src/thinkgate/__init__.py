"""Routing harness for long- vs short-reasoning completion modes.

The package renders the mode and monitor prompt templates, talks to any
OpenAI-compatible completion endpoint (or a deterministic mock), scores
questions with seven exit monitors, and evaluates routing quality via
threshold sweeps and calibration metrics.
"""

from .answers import (
    GradedAnswer,
    QuestionRecord,
    answers_equivalent,
    extract_boxed,
    grade_generation,
    load_dataset,
)
from .backend import (
    BackendError,
    Completion,
    FixtureMissError,
    HttpBackend,
    MockBackend,
    SamplingParams,
    TokenInfo,
    request_key,
)
from .earlyexit import ChunkBoundary, ExitTrace, run_early_exit, segment_chunks
from .harness import RunConfig, run_pipeline
from .metrics import (
    CalibrationReport,
    PairedInstance,
    SweepPoint,
    brier,
    compose_at_threshold,
    ece,
    random_baseline_curve,
    roc_auc,
    sweep_thresholds,
)
from .prompting import (
    ChatMarkers,
    FakeThought,
    PromptKind,
    render_early_exit_suffix,
    render_prompt,
)
from .scorers import (
    ENTROPY_CEILING,
    MlpWeights,
    ScoreValue,
    ScorerKind,
    compute_score,
    decide,
    mlp_forward,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "CalibrationReport",
    "ChatMarkers",
    "ChunkBoundary",
    "Completion",
    "ENTROPY_CEILING",
    "ExitTrace",
    "FakeThought",
    "FixtureMissError",
    "GradedAnswer",
    "HttpBackend",
    "MlpWeights",
    "MockBackend",
    "PairedInstance",
    "PromptKind",
    "QuestionRecord",
    "RunConfig",
    "SamplingParams",
    "ScoreValue",
    "ScorerKind",
    "SweepPoint",
    "TokenInfo",
    "answers_equivalent",
    "brier",
    "compose_at_threshold",
    "compute_score",
    "decide",
    "ece",
    "extract_boxed",
    "grade_generation",
    "load_dataset",
    "mlp_forward",
    "random_baseline_curve",
    "render_early_exit_suffix",
    "render_prompt",
    "request_key",
    "roc_auc",
    "run_early_exit",
    "run_pipeline",
    "segment_chunks",
    "sweep_thresholds",
]
