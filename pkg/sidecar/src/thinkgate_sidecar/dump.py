"""Mock-fixture dumps: replay-ready completions generated by a local model.

For each question the dump issues exactly the requests the core pipeline
will make (both generation modes, agreement-probe draws, and the enabled
monitor continuations), generates each completion with the local model,
and writes fixture lines keyed by the core's request-key algorithm. A
pipeline run over the same dataset and settings then hits the fixture for
every request.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch

from thinkgate.answers import load_dataset
from thinkgate.backend import SamplingParams, greedy_params, request_key
from thinkgate.prompting import (
    DEFAULT_FAKE,
    DEFAULT_MARKERS,
    ChatMarkers,
    FakeThought,
    PromptKind,
    render_prompt,
)
from thinkgate.scorers import (
    CONFIDENCE_MAX_TOKENS,
    INDUCED_MAX_TOKENS,
    VERDICT_MAX_TOKENS,
    ScorerKind,
    dynasor_sample_index,
    probe_params,
)

from .model import ModelHandle

logger = logging.getLogger(__name__)

DEFAULT_SCORERS = (
    ScorerKind.FLASHTHINK,
    ScorerKind.PROMPTCONF,
    ScorerKind.DYNASOR,
    ScorerKind.PREJUDGE,
    ScorerKind.DEER,
    ScorerKind.ENTROPY,
)


@dataclass
class DumpJob:
    dataset_path: str
    out_path: str
    device: str = "cpu"
    seed: int = 0
    params: SamplingParams = field(default_factory=SamplingParams)
    markers: ChatMarkers = DEFAULT_MARKERS
    fake: FakeThought = DEFAULT_FAKE
    scorers: tuple[ScorerKind, ...] = DEFAULT_SCORERS
    dynasor_samples: int = 3
    generation_cap: int = 24  # per-request ceiling on generated tokens


def _request_seed(seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def _generate_entry(
    handle: ModelHandle,
    prompt: str,
    params: SamplingParams,
    sample_index: int,
    job: DumpJob,
) -> dict:
    """Autoregressively generate one completion and its token records."""
    key = request_key(prompt, params, sample_index)
    generator = torch.Generator().manual_seed(_request_seed(job.seed, key))
    ids = handle.encode(prompt).ids
    budget = min(params.max_new_tokens, job.generation_cap)
    top_k = params.top_logprobs
    tokens = []
    text_parts = []
    for _ in range(budget):
        if len(ids) >= handle.max_positions:
            break
        logprobs = handle.next_token_logprobs(ids)
        if params.temperature == 0.0:
            chosen = int(torch.argmax(logprobs))
        else:
            scaled = torch.softmax(logprobs / params.temperature, dim=-1)
            chosen = int(torch.multinomial(scaled, 1, generator=generator))
        top_values, top_ids = torch.topk(logprobs, k=min(top_k, logprobs.shape[0]))
        tokens.append(
            {
                "t": handle.decode_token(chosen),
                "lp": min(float(logprobs[chosen]), 0.0),
                "top": [
                    [handle.decode_token(int(t)), min(float(v), 0.0)]
                    for v, t in zip(top_values, top_ids)
                ],
            }
        )
        text_parts.append(handle.decode_token(chosen))
        ids = torch.cat([ids, torch.tensor([chosen])])
    finish = "length" if len(tokens) == params.max_new_tokens else "stop"
    return {"key": key, "text": "".join(text_parts), "tokens": tokens, "finish": finish}


def plan_requests(job: DumpJob, question) -> list[tuple[str, SamplingParams, int]]:
    """The (prompt, params, sample_index) triples the pipeline requests."""
    m, f, p = job.markers, job.fake, job.params
    requests = [
        (render_prompt(PromptKind.THINKING, question.text, m), p, 0),
        (render_prompt(PromptKind.NOTHINKING, question.text, m, f), p, 0),
    ]
    if ScorerKind.DYNASOR in job.scorers:
        probe_prompt = render_prompt(PromptKind.DYNASOR_PROBE, question.text, m, f)
        pp = probe_params(p)
        for draw in range(job.dynasor_samples):
            requests.append(
                (probe_prompt, pp, dynasor_sample_index(job.seed, question.id, draw))
            )
    monitor_map = {
        ScorerKind.FLASHTHINK: (PromptKind.FLASHTHINK_VERIFIER, VERDICT_MAX_TOKENS),
        ScorerKind.PROMPTCONF: (PromptKind.PROMPTCONF, CONFIDENCE_MAX_TOKENS),
        ScorerKind.PREJUDGE: (PromptKind.PREJUDGE, VERDICT_MAX_TOKENS),
        ScorerKind.DEER: (PromptKind.DEER_INDUCE, INDUCED_MAX_TOKENS),
        ScorerKind.ENTROPY: (PromptKind.ENTROPY_CONTEXT, INDUCED_MAX_TOKENS),
    }
    for kind, (prompt_kind, cap) in monitor_map.items():
        if kind in job.scorers:
            requests.append(
                (render_prompt(prompt_kind, question.text, m, f), greedy_params(p, cap), 0)
            )
    return requests


def export_logprob_dump(job: DumpJob, handle: ModelHandle) -> Path:
    """Generate and write the fixture file; returns its path."""
    questions = load_dataset(job.dataset_path)
    out_path = Path(job.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n_entries = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for question in questions:
            for prompt, params, sample_index in plan_requests(job, question):
                entry = _generate_entry(handle, prompt, params, sample_index, job)
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
                n_entries += 1
    logger.info("wrote %d fixture entries for %d questions", n_entries, len(questions))
    return out_path
