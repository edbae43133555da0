"""Iterative early exit: chunk the thought stream, monitor, terminate.

The loop generates thinking content incrementally (each step re-sends the
accumulated prefix), applies a scorer at every chunk boundary, and on an
exit decision appends the end-of-thinking terminator and generates the
conclusion. Zero-step mode selection is the same loop with ``budget=0``:
the scorer runs once on the pre-written thought and the whole generation
happens under the chosen mode's template.

Chunking protocol (per strategy):

* ``paragraph`` — each call stops at the blank-line separator. An empty
  continuation, a length-capped one, or one containing the think-close
  marker ends the thinking phase naturally.
* ``token_interval`` — each call caps ``max_new_tokens`` at the interval; a
  ``stop`` finish means the model ended thinking on its own.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Sequence

from .answers import QuestionRecord
from .backend import (
    FINISH_LENGTH,
    CompletionBackend,
    SamplingParams,
    TokenInfo,
)
from .prompting import (
    DEFAULT_FAKE,
    DEFAULT_MARKERS,
    ChatMarkers,
    FakeThought,
    PromptKind,
    render_early_exit_suffix,
    render_prompt,
)
from .scorers import ScoreValue, ScorerKind, compute_score, decide

logger = logging.getLogger(__name__)

PARAGRAPH = "paragraph"
TOKEN_INTERVAL = "token_interval"

#: Blank-line separator between paragraph chunks.
PARAGRAPH_SEP = "\n\n"

#: Monitoring cadences used by interval-based probing in the literature.
STANDARD_INTERVALS = (32, 64, 128)


@dataclass(frozen=True)
class ChunkBoundary:
    """How the thought stream is cut into monitorable chunks."""

    strategy: str = PARAGRAPH
    interval_tokens: int = 64

    def __post_init__(self) -> None:
        if self.strategy not in (PARAGRAPH, TOKEN_INTERVAL):
            raise ValueError(f"unknown chunk strategy {self.strategy!r}")
        if self.interval_tokens <= 0:
            raise ValueError("interval_tokens must be positive")
        if self.strategy == TOKEN_INTERVAL and self.interval_tokens not in STANDARD_INTERVALS:
            logger.warning(
                "interval_tokens=%d is outside the standard cadences %s",
                self.interval_tokens,
                STANDARD_INTERVALS,
            )


@dataclass(frozen=True)
class ExitTrace:
    """Record of one early-exit run."""

    question_id: str
    chunks_seen: int
    per_chunk_scores: tuple[ScoreValue, ...]
    exited_at: int | None
    final_text: str
    total_tokens: int
    zero_step_score: ScoreValue | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_chunk_scores", tuple(self.per_chunk_scores))
        if self.exited_at is not None and self.exited_at > self.chunks_seen:
            raise ValueError("exited_at cannot exceed chunks_seen")

    def to_json(self) -> dict:
        return {
            "kind": "early_exit",
            "id": self.question_id,
            "chunks_seen": self.chunks_seen,
            "per_chunk_scores": [
                {"value": s.value, "orientation": s.orientation, "aux": s.aux}
                for s in self.per_chunk_scores
            ],
            "zero_step_score": (
                None
                if self.zero_step_score is None
                else {
                    "value": self.zero_step_score.value,
                    "orientation": self.zero_step_score.orientation,
                    "aux": self.zero_step_score.aux,
                }
            ),
            "exited_at": self.exited_at,
            "final_text": self.final_text,
            "total_tokens": self.total_tokens,
        }


def segment_chunks(
    thought_text: str,
    tokens: Sequence[TokenInfo],
    boundary: ChunkBoundary,
) -> list[tuple[int, int]]:
    """Chunk spans for an already-generated thought trace.

    Paragraph spans are character offsets into ``thought_text`` (blank-line
    separated, empty chunks dropped); token-interval spans are index ranges
    into ``tokens`` (every ``interval_tokens``, final partial chunk kept).
    """
    if boundary.strategy == PARAGRAPH:
        spans: list[tuple[int, int]] = []
        pos = 0
        while pos <= len(thought_text):
            cut = thought_text.find(PARAGRAPH_SEP, pos)
            end = cut if cut >= 0 else len(thought_text)
            if thought_text[pos:end].strip():
                spans.append((pos, end))
            if cut < 0:
                break
            pos = cut + len(PARAGRAPH_SEP)
        return spans
    step = boundary.interval_tokens
    return [(i, min(i + step, len(tokens))) for i in range(0, len(tokens), step)]


def _chunk_call_params(params: SamplingParams, boundary: ChunkBoundary) -> SamplingParams:
    if boundary.strategy == PARAGRAPH:
        return replace(params, stop_sequences=(PARAGRAPH_SEP,))
    return replace(params, max_new_tokens=boundary.interval_tokens, stop_sequences=())


def run_early_exit(
    question: QuestionRecord,
    scorer: ScorerKind,
    lam: float,
    alpha: float,
    boundary: ChunkBoundary,
    backend: CompletionBackend,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    params: SamplingParams = SamplingParams(),
    budget: int = 64,
    seed: int = 0,
    dynasor_samples: int = 3,
    p_exit: float = 0.5,
    hidden_states=None,
    probe_weights=None,
) -> ExitTrace:
    """Generate with per-chunk exit monitoring; ``budget=0`` is zero-step
    mode selection on the pre-written thought.

    Monitor calls are side-effect-free on the main trace: induced trial
    answers are scored and discarded, never appended to the thoughts.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")

    def monitor(thoughts: str | None) -> ScoreValue:
        return compute_score(
            scorer,
            question,
            backend=backend,
            markers=markers,
            fake=fake,
            params=params,
            seed=seed,
            dynasor_samples=dynasor_samples,
            p_exit=p_exit,
            hidden_states=hidden_states,
            probe_weights=probe_weights,
            thoughts=thoughts,
        )

    if budget == 0:
        score = monitor(None)
        if decide(score, lam, alpha).exit:
            prompt = render_prompt(PromptKind.NOTHINKING, question.text, markers, fake)
            conclusion = backend.complete(prompt, params)
            return ExitTrace(
                question_id=question.id,
                chunks_seen=0,
                per_chunk_scores=(),
                exited_at=0,
                final_text=conclusion.text,
                total_tokens=conclusion.n_tokens,
                zero_step_score=score,
            )
        prompt = render_prompt(PromptKind.THINKING, question.text, markers)
        full = backend.complete(prompt, params)
        return ExitTrace(
            question_id=question.id,
            chunks_seen=0,
            per_chunk_scores=(),
            exited_at=None,
            final_text=full.text,
            total_tokens=full.n_tokens,
            zero_step_score=score,
        )

    base_prompt = render_prompt(PromptKind.THINKING, question.text, markers)
    chunk_params = _chunk_call_params(params, boundary)
    thoughts = ""
    total_tokens = 0
    chunks_seen = 0
    scores: list[ScoreValue] = []
    exited_at: int | None = None
    ended_naturally = False

    for index in range(1, budget + 1):
        completion = backend.complete(base_prompt + thoughts, chunk_params)
        total_tokens += completion.n_tokens

        if boundary.strategy == PARAGRAPH and not completion.text:
            ended_naturally = True
            break
        thoughts += completion.text
        chunks_seen += 1
        if markers.think_close in completion.text:
            ended_naturally = True
            break
        if boundary.strategy == PARAGRAPH and completion.finish_reason == FINISH_LENGTH:
            # Hit the run's generation cap mid-thought.
            ended_naturally = True
            break
        if boundary.strategy == TOKEN_INTERVAL and completion.finish_reason != FINISH_LENGTH:
            # Stopped before filling the interval: thinking ended on its own.
            ended_naturally = True
            break

        score = monitor(thoughts)
        scores.append(score)
        if decide(score, lam, alpha).exit:
            exited_at = index
            break
        if boundary.strategy == PARAGRAPH:
            thoughts += PARAGRAPH_SEP

    if exited_at is not None:
        suffix = render_early_exit_suffix(markers)
        conclusion = backend.complete(base_prompt + thoughts + suffix, params)
        total_tokens += conclusion.n_tokens
        final_text = thoughts + suffix + conclusion.text
    elif ended_naturally:
        final_text = thoughts
    else:
        # Budget exhausted without a decision: finish the run unconstrained.
        tail = backend.complete(base_prompt + thoughts, params)
        total_tokens += tail.n_tokens
        final_text = thoughts + tail.text

    return ExitTrace(
        question_id=question.id,
        chunks_seen=chunks_seen,
        per_chunk_scores=tuple(scores),
        exited_at=exited_at,
        final_text=final_text,
        total_tokens=total_tokens,
    )


def append_trace(path, trace: ExitTrace) -> None:
    """Append one trace to the early-exit JSON Lines log."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(trace.to_json(), sort_keys=True) + "\n")
