"""Hidden-state extraction at the end-of-thinking position.

For every question, the short-mode (pre-closed thinking) prompt is
rendered, run through the model, and the last-layer hidden vector at the
final token of the think-close marker is written to the core's
hidden-state file format. The position is asserted against the
tokenizer's offset mapping, never assumed.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from thinkgate.answers import QuestionRecord, load_dataset
from thinkgate.prompting import DEFAULT_FAKE, DEFAULT_MARKERS, ChatMarkers, FakeThought, PromptKind, render_prompt

from .model import ModelHandle

logger = logging.getLogger(__name__)


@dataclass
class ExtractionJob:
    dataset_path: str
    out_path: str
    device: str = "cpu"
    batch_size: int = 8
    markers: ChatMarkers = DEFAULT_MARKERS
    fake: FakeThought = DEFAULT_FAKE


def think_close_token_index(handle: ModelHandle, prompt: str, markers: ChatMarkers) -> int:
    """Index of the token carrying the final character of the think-close
    marker, validated against the offset mapping."""
    close_start = prompt.rfind(markers.think_close)
    if close_start < 0:
        raise ValueError("prompt does not contain the think-close marker")
    close_end = close_start + len(markers.think_close)
    target = close_end - 1
    encoded = handle.encode(prompt)
    index = None
    for i, (start, end) in enumerate(encoded.offsets):
        if start <= target < end:
            index = i
            break
    if index is None:
        raise ValueError("offset mapping does not cover the think-close marker")
    start, end = encoded.offsets[index]
    if end != close_end:
        raise AssertionError(
            f"extraction position drifted: token span ({start},{end}) does not"
            f" end at the think-close occurrence ({close_start},{close_end})"
        )
    return index


def _forward_batch(
    handle: ModelHandle, prompts: list[str], positions: list[int]
) -> list[np.ndarray]:
    encoded = [handle.encode(p) for p in prompts]
    lengths = [len(e.ids) for e in encoded]
    width = max(lengths)
    ids = torch.zeros((len(encoded), width), dtype=torch.long)
    mask = torch.zeros((len(encoded), width), dtype=torch.long)
    for row, enc in enumerate(encoded):
        ids[row, : lengths[row]] = enc.ids
        mask[row, : lengths[row]] = 1
    hidden = handle.forward_hidden(ids, mask)
    return [
        hidden[row, positions[row]].numpy().astype("<f4") for row in range(len(encoded))
    ]


def extract_hidden_states(job: ExtractionJob, handle: ModelHandle) -> Path:
    """Write one hidden-state record per dataset question.

    Records are appended batch by batch, so a failed job preserves the
    completed prefix. An out-of-memory failure halves the batch and
    retries once before giving up.
    """
    questions = load_dataset(job.dataset_path)
    out_path = Path(job.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    prompts, positions = [], []
    for q in questions:
        prompt = render_prompt(PromptKind.NOTHINKING, q.text, job.markers, job.fake)
        if len(handle.encode(prompt).ids) > handle.max_positions:
            raise ValueError(f"question {q.id}: prompt exceeds the model's context window")
        prompts.append(prompt)
        positions.append(think_close_token_index(handle, prompt, job.markers))

    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"version": 1, "dim": handle.hidden_dim, "dtype": "f32le"}) + "\n")
        start = 0
        batch_size = max(1, job.batch_size)
        retried = False
        while start < len(questions):
            stop = min(start + batch_size, len(questions))
            try:
                vectors = _forward_batch(handle, prompts[start:stop], positions[start:stop])
            except RuntimeError as exc:
                if "out of memory" in str(exc).lower() and not retried:
                    batch_size = max(1, batch_size // 2)
                    retried = True
                    logger.warning("forward pass ran out of memory; retrying with batch %d", batch_size)
                    continue
                raise
            for q, vec in zip(questions[start:stop], vectors):
                if not np.isfinite(vec).all():
                    raise ValueError(f"question {q.id}: non-finite hidden state")
                fh.write(
                    json.dumps(
                        {"id": q.id, "vec_b64": base64.b64encode(vec.tobytes()).decode()}
                    )
                    + "\n"
                )
            fh.flush()
            start = stop
    return out_path
