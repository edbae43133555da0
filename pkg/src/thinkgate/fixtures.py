"""Authoring tools for mock-backend fixtures.

A fixture file scripts every completion the pipeline will request. The
builder computes request keys with the same prompt renderers and parameter
helpers the pipeline uses, so a scripted run never misses. Token records
are synthesized with a naive whitespace tokenizer unless the script pins
explicit per-token probabilities (needed for the induced-answer monitors).
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Mapping, Sequence

from .answers import QuestionRecord
from .backend import MockBackend, SamplingParams, request_key
from .prompting import (
    DEFAULT_FAKE,
    DEFAULT_MARKERS,
    ChatMarkers,
    FakeThought,
    PromptKind,
    render_prompt,
)
from .scorers import (
    CONFIDENCE_MAX_TOKENS,
    INDUCED_MAX_TOKENS,
    VERDICT_MAX_TOKENS,
    dynasor_sample_index,
    probe_params,
)
from .backend import greedy_params

DEFAULT_LP = -0.1


def naive_tokens(text: str, lp: float = DEFAULT_LP) -> list[dict]:
    """Synthesize a token list whose concatenation is exactly ``text``.

    Blank-line separators become their own tokens so stop-sequence cuts
    never straddle a token.
    """
    tokens: list[dict] = []
    for piece in re.split(r"(\n\n)", text):
        if not piece:
            continue
        if piece == "\n\n":
            parts = [piece]
        else:
            parts = re.findall(r"\s*\S+|\s+", piece)
        for part in parts:
            tokens.append({"t": part, "lp": lp, "top": [[part, lp]]})
    assert "".join(t["t"] for t in tokens) == text
    return tokens


def pieces_tokens(pieces: Sequence[Sequence], realized_lp_from_prob: bool = True) -> list[dict]:
    """Token records from explicit (token_text, probability) pairs.

    The realized token doubles as the top-1 alternative, which matches
    greedy decoding.
    """
    tokens = []
    for text, prob in pieces:
        if not 0.0 < prob <= 1.0:
            raise ValueError(f"token probability must be in (0,1], got {prob}")
        lp = math.log(prob)
        tokens.append({"t": text, "lp": lp, "top": [[text, lp]]})
    return tokens


class FixtureBuilder:
    """Accumulates fixture entries and serializes them to JSON Lines."""

    def __init__(
        self,
        params: SamplingParams = SamplingParams(),
        markers: ChatMarkers = DEFAULT_MARKERS,
        fake: FakeThought = DEFAULT_FAKE,
        seed: int = 0,
        dynasor_samples: int = 3,
    ):
        self.params = params
        self.markers = markers
        self.fake = fake
        self.seed = seed
        self.dynasor_samples = dynasor_samples
        self.entries: dict[str, dict] = {}

    # -- low-level -----------------------------------------------------

    def add(
        self,
        prompt: str,
        params: SamplingParams,
        text: str,
        *,
        tokens: list[dict] | None = None,
        finish: str = "stop",
        sample_index: int = 0,
        lp: float = DEFAULT_LP,
    ) -> str:
        """Register one completion; returns its request key."""
        key = request_key(prompt, params, sample_index)
        self.entries[key] = {
            "key": key,
            "text": text,
            "tokens": tokens if tokens is not None else naive_tokens(text, lp),
            "finish": finish,
        }
        return key

    # -- phase-1 generations --------------------------------------------

    def add_thinking(self, question: QuestionRecord, text: str, **kw) -> str:
        prompt = render_prompt(PromptKind.THINKING, question.text, self.markers)
        return self.add(prompt, self.params, text, **kw)

    def add_nothinking(self, question: QuestionRecord, text: str, **kw) -> str:
        prompt = render_prompt(PromptKind.NOTHINKING, question.text, self.markers, self.fake)
        return self.add(prompt, self.params, text, **kw)

    # -- monitor replies --------------------------------------------------

    def add_flashthink(self, question: QuestionRecord, reply: str) -> str:
        prompt = render_prompt(
            PromptKind.FLASHTHINK_VERIFIER, question.text, self.markers, self.fake
        )
        return self.add(prompt, greedy_params(self.params, VERDICT_MAX_TOKENS), reply)

    def add_promptconf(self, question: QuestionRecord, continuation: str) -> str:
        prompt = render_prompt(PromptKind.PROMPTCONF, question.text, self.markers)
        return self.add(prompt, greedy_params(self.params, CONFIDENCE_MAX_TOKENS), continuation)

    def add_prejudge(self, question: QuestionRecord, continuation: str) -> str:
        prompt = render_prompt(PromptKind.PREJUDGE, question.text, self.markers)
        return self.add(prompt, greedy_params(self.params, VERDICT_MAX_TOKENS), continuation)

    def add_deer(self, question: QuestionRecord, pieces: Sequence[Sequence]) -> str:
        """Induced boxed answer; ``pieces`` are (token, top-1 prob) pairs for
        the answer tokens. A closing-brace token is appended."""
        prompt = render_prompt(PromptKind.DEER_INDUCE, question.text, self.markers, self.fake)
        tokens = pieces_tokens(pieces)
        tokens.append({"t": "}", "lp": math.log(0.99), "top": [["}", math.log(0.99)]]})
        text = "".join(t["t"] for t in tokens)
        return self.add(
            prompt, greedy_params(self.params, INDUCED_MAX_TOKENS), text, tokens=tokens
        )

    def add_entropy(self, question: QuestionRecord, pieces: Sequence[Sequence]) -> str:
        """Greedy continuation after the pre-written thought; ``pieces`` are
        (token, realized prob) pairs."""
        prompt = render_prompt(PromptKind.ENTROPY_CONTEXT, question.text, self.markers, self.fake)
        tokens = pieces_tokens(pieces)
        text = "".join(t["t"] for t in tokens)
        return self.add(
            prompt, greedy_params(self.params, INDUCED_MAX_TOKENS), text, tokens=tokens
        )

    def add_dynasor(self, question: QuestionRecord, answers: Sequence[str]) -> list[str]:
        """One probe draw per trial answer (the closing brace is appended)."""
        prompt = render_prompt(PromptKind.DYNASOR_PROBE, question.text, self.markers, self.fake)
        keys = []
        p = probe_params(self.params)
        for draw, answer in enumerate(answers):
            keys.append(
                self.add(
                    prompt,
                    p,
                    f"{answer}}}",
                    sample_index=dynasor_sample_index(self.seed, question.id, draw),
                )
            )
        return keys

    # -- script-level -----------------------------------------------------

    def script_question(self, question: QuestionRecord, script: Mapping) -> None:
        """Register everything one script entry describes for a question.

        Recognized keys: ``thinking``/``nothinking`` (completion text or
        {"text", "finish"}), ``flashthink``/``promptconf``/``prejudge``
        (reply text), ``deer``/``entropy`` ([[token, prob], ...]),
        ``dynasor`` ([answer, ...]).
        """
        for mode, adder in (("thinking", self.add_thinking), ("nothinking", self.add_nothinking)):
            if mode in script:
                spec = script[mode]
                if isinstance(spec, str):
                    adder(question, spec)
                else:
                    adder(question, spec["text"], finish=spec.get("finish", "stop"))
        if "flashthink" in script:
            self.add_flashthink(question, script["flashthink"])
        if "promptconf" in script:
            self.add_promptconf(question, script["promptconf"])
        if "prejudge" in script:
            self.add_prejudge(question, script["prejudge"])
        if "deer" in script:
            self.add_deer(question, script["deer"])
        if "entropy" in script:
            self.add_entropy(question, script["entropy"])
        if "dynasor" in script:
            self.add_dynasor(question, script["dynasor"])

    # -- output -----------------------------------------------------------

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries.values():
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def backend(self) -> MockBackend:
        return MockBackend(self.entries)


def build_from_script(
    script: Mapping,
    questions: Sequence[QuestionRecord],
    params: SamplingParams = SamplingParams(),
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    seed: int = 0,
) -> FixtureBuilder:
    """Build a fixture from a script document: {"questions": {id: entry}}."""
    builder = FixtureBuilder(params=params, markers=markers, fake=fake, seed=seed)
    by_id = {q.id: q for q in questions}
    for qid, entry in script.get("questions", {}).items():
        try:
            question = by_id[qid]
        except KeyError:
            raise ValueError(f"script references unknown question id {qid!r}") from None
        builder.script_question(question, entry)
    return builder


def validate_fixture(path: str | Path) -> int:
    """Load-check a fixture file; returns the entry count."""
    return len(MockBackend.from_file(path))
