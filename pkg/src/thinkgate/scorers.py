"""The exit monitors: confidence scorers and the threshold decision rule.

Each scorer maps a question (plus whatever context its method uses: a
verifier reply, an induced trial answer, hidden states, ...) to a
:class:`ScoreValue` carrying the confidence and its orientation. A single
:func:`decide` rule turns any score into the exit/continue flag, for both
zero-step mode selection and per-chunk early exit.

Orientation conventions:

* ``higher_exits`` — confidence-like scores in [0, 1]; exit when the value
  strictly exceeds the threshold.
* ``lower_exits`` — uncertainty-like scores (the entropy monitor); exit
  when the value drops to ``alpha`` times the per-token entropy ceiling
  ``1/(e*ln 2)`` or below.

Parse failures never exit: a monitor that cannot read its own reply falls
back to the long-reasoning mode and records the failure in ``aux``.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .answers import QuestionRecord, answers_equivalent, matched_brace_prefix
from .backend import Completion, CompletionBackend, SamplingParams, greedy_params
from .backend import ROLE_REASONER, ROLE_VERIFIER
from .prompting import (
    CONFIDENCE_BIN_LABELS,
    DEFAULT_FAKE,
    DEFAULT_MARKERS,
    ChatMarkers,
    FakeThought,
    PromptKind,
    render_monitor_prompt,
    render_prompt,
)

#: Maximum of -p*log2(p), attained at p = 1/e; the entropy decision ceiling.
ENTROPY_CEILING = 1.0 / (math.e * math.log(2.0))

HIGHER_EXITS = "higher_exits"
LOWER_EXITS = "lower_exits"

#: Token budgets for the short monitor continuations.
VERDICT_MAX_TOKENS = 16
CONFIDENCE_MAX_TOKENS = 8
INDUCED_MAX_TOKENS = 32


class ScorerKind(enum.Enum):
    FLASHTHINK = "flashthink"
    PROMPTCONF = "promptconf"
    DYNASOR = "dynasor"
    PREJUDGE = "prejudge"
    PROBECONF = "probeconf"
    DEER = "deer"
    ENTROPY = "entropy"
    RANDOM = "random"


#: Scorers whose value is a binary verdict rather than a graded confidence.
BINARY_SCORERS = frozenset({ScorerKind.FLASHTHINK, ScorerKind.PREJUDGE})

#: Scorers that need a completion backend (vs. stores or pure randomness).
BACKEND_SCORERS = frozenset(
    {
        ScorerKind.FLASHTHINK,
        ScorerKind.PROMPTCONF,
        ScorerKind.DYNASOR,
        ScorerKind.PREJUDGE,
        ScorerKind.DEER,
        ScorerKind.ENTROPY,
    }
)


def orientation_for(kind: ScorerKind) -> str:
    return LOWER_EXITS if kind is ScorerKind.ENTROPY else HIGHER_EXITS


class MissingFeatureError(Exception):
    """A scorer's required input (e.g. a hidden-state record) is absent."""


@dataclass(frozen=True)
class ScoreValue:
    """A monitor's confidence output plus its decision orientation."""

    scorer: ScorerKind
    value: float
    orientation: str
    aux: dict = field(default_factory=dict)

    def to_json(self, question_id: str) -> dict:
        return {
            "id": question_id,
            "scorer": self.scorer.value,
            "value": self.value,
            "orientation": self.orientation,
            "aux": self.aux,
        }


@dataclass(frozen=True)
class Decision:
    exit: bool


def decide(score: ScoreValue, lam: float, alpha: float = 1.0) -> Decision:
    """Exit/continue flag for one score.

    ``higher_exits`` scores exit on ``value > lam`` (strict); ``lower_exits``
    scores exit on ``value <= alpha * ENTROPY_CEILING``. Exit means: route to
    the short mode (zero-step) or append the terminator (early exit).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0,1], got {lam}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    if score.orientation == HIGHER_EXITS:
        return Decision(exit=score.value > lam)
    return Decision(exit=score.value <= alpha * ENTROPY_CEILING)


# ---------------------------------------------------------------------------
# Prompt-reply monitors
# ---------------------------------------------------------------------------

_FIRST_WORD = re.compile(r"[A-Za-z]+")


def _monitor_prompt(
    kind: PromptKind,
    question: QuestionRecord,
    markers: ChatMarkers,
    fake: FakeThought,
    thoughts: str | None,
) -> str:
    """Zero-step template, or the same shape over an in-progress trace."""
    if thoughts is None:
        return render_prompt(kind, question.text, markers, fake)
    return render_monitor_prompt(kind, question.text, thoughts, markers)


def score_flashthink(
    question: QuestionRecord,
    backend: CompletionBackend,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    params: SamplingParams = SamplingParams(),
    thoughts: str | None = None,
) -> ScoreValue:
    """Separate-verifier verdict: is the thought sufficient to answer?

    The first alphabetic token of the reply is parsed case-insensitively;
    "yes" exits (value 1), "no" keeps thinking (value 0), anything else
    keeps thinking with ``aux.parse_failed`` set.
    """
    prompt = _monitor_prompt(PromptKind.FLASHTHINK_VERIFIER, question, markers, fake, thoughts)
    reply = backend.complete(prompt, greedy_params(params, VERDICT_MAX_TOKENS), ROLE_VERIFIER)
    word = _FIRST_WORD.search(reply.text)
    aux: dict[str, Any] = {"reply": reply.text}
    if word and word.group(0).lower() == "yes":
        value = 1.0
    elif word and word.group(0).lower() == "no":
        value = 0.0
    else:
        value = 0.0
        aux["parse_failed"] = True
    return ScoreValue(ScorerKind.FLASHTHINK, value, HIGHER_EXITS, aux)


def score_promptconf(
    question: QuestionRecord,
    backend: CompletionBackend,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    params: SamplingParams = SamplingParams(),
    thoughts: str | None = None,
) -> ScoreValue:
    """Self-reported confidence bin, read off the "Confidence: 0." stem.

    The model continues the stem with digits; the first digit selects the
    bin and the bin's lower bound is the score.
    """
    prompt = _monitor_prompt(PromptKind.PROMPTCONF, question, markers, fake, thoughts)
    reply = backend.complete(prompt, greedy_params(params, CONFIDENCE_MAX_TOKENS), ROLE_REASONER)
    continuation = reply.text
    aux: dict[str, Any] = {"continuation": continuation}
    if continuation and continuation[0].isdecimal():
        tenths = int(continuation[0])
        value = tenths / 10.0
        aux["bin_label"] = CONFIDENCE_BIN_LABELS[tenths]
    else:
        value = 0.0
        aux["parse_failed"] = True
    return ScoreValue(ScorerKind.PROMPTCONF, value, HIGHER_EXITS, aux)


def score_prejudge(
    question: QuestionRecord,
    backend: CompletionBackend,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    params: SamplingParams = SamplingParams(),
    thoughts: str | None = None,
) -> ScoreValue:
    """Self-judged need for slow thinking, as a JSON boolean continuation.

    ``true`` means reasoning is required (keep thinking, value 0); ``false``
    exits (value 1). The literal must appear within the first 16 tokens.
    """
    prompt = _monitor_prompt(PromptKind.PREJUDGE, question, markers, fake, thoughts)
    reply = backend.complete(prompt, greedy_params(params, VERDICT_MAX_TOKENS), ROLE_REASONER)
    head = (
        "".join(t.token_text for t in reply.tokens[:16]) if reply.tokens else reply.text
    )
    aux: dict[str, Any] = {"continuation": head}
    true_at = head.find("true")
    false_at = head.find("false")
    if true_at >= 0 and (false_at < 0 or true_at < false_at):
        value = 0.0
    elif false_at >= 0:
        value = 1.0
    else:
        value = 0.0
        aux["parse_failed"] = True
    return ScoreValue(ScorerKind.PREJUDGE, value, HIGHER_EXITS, aux)


def dynasor_sample_index(seed: int, question_id: str, draw: int) -> int:
    """Sample index for one agreement-probe draw.

    Keyed on (seed, question id, draw) so probe sampling is an independent,
    order-free sub-stream: scoring questions in any order yields identical
    requests.
    """
    digest = hashlib.sha256(f"dynasor:{seed}:{question_id}:{draw}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def probe_params(params: SamplingParams) -> SamplingParams:
    """Agreement-probe draws keep the run temperature (they rely on
    sampling diversity) but cap the continuation length."""
    return replace(params, max_new_tokens=INDUCED_MAX_TOKENS, stop_sequences=())


def score_dynasor(
    question: QuestionRecord,
    backend: CompletionBackend,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    params: SamplingParams = SamplingParams(),
    n_samples: int = 3,
    seed: int = 0,
    thoughts: str | None = None,
) -> ScoreValue:
    """Maximum agreement ratio over sampled induced answers.

    Draws ``n_samples`` continuations of the answer-probe prompt at the run
    temperature with distinct sample indices, extracts each trial answer,
    groups by answer equivalence, and scores (largest group)/n. A draw with
    no extractable answer forms its own singleton group.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    prompt = _monitor_prompt(PromptKind.DYNASOR_PROBE, question, markers, fake, thoughts)
    p = probe_params(params)
    trials: list[str | None] = []
    for draw in range(n_samples):
        reply = backend.complete(
            prompt, p, ROLE_REASONER, sample_index=dynasor_sample_index(seed, question.id, draw)
        )
        trials.append(matched_brace_prefix(reply.text))
    largest = largest_agreement(trials, question.answer_type)
    aux: dict[str, Any] = {"trial_answers": trials}
    if all(t is None for t in trials):
        aux["all_unparsed"] = True
    return ScoreValue(ScorerKind.DYNASOR, largest / n_samples, HIGHER_EXITS, aux)


def largest_agreement(trials: Sequence[str | None], answer_type: str) -> int:
    """Size of the largest answer-equivalence class among trial answers.

    Unextractable trials (None) are singleton classes.
    """
    if not trials:
        raise ValueError("need at least one trial answer")
    groups: list[list[int]] = []
    for i, answer in enumerate(trials):
        if answer is not None:
            for group in groups:
                ref = trials[group[0]]
                if ref is not None and answers_equivalent(answer, ref, answer_type):
                    group.append(i)
                    break
            else:
                groups.append([i])
        else:
            groups.append([i])
    return max(len(g) for g in groups)


# ---------------------------------------------------------------------------
# Internal-state monitors
# ---------------------------------------------------------------------------

_ACTIVATIONS = {
    "relu": lambda x: np.maximum(x, 0.0),
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class MlpLayer:
    in_dim: int
    out_dim: int
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self) -> None:
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.shape != (self.out_dim, self.in_dim):
            raise ValueError(
                f"weight shape {self.weight.shape} != ({self.out_dim}, {self.in_dim})"
            )
        if self.bias.shape != (self.out_dim,):
            raise ValueError(f"bias shape {self.bias.shape} != ({self.out_dim},)")


@dataclass(frozen=True)
class MlpWeights:
    """A self-describing feed-forward probe: affine layers plus activations."""

    layers: tuple[MlpLayer, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("probe must have at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.out_dim != cur.in_dim:
                raise ValueError(
                    f"layer dims mismatch: {prev.out_dim} feeds {cur.in_dim}"
                )
        last = self.layers[-1]
        if last.activation != "sigmoid" or last.out_dim != 1:
            raise ValueError("final layer must be sigmoid with out_dim 1")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim


def load_mlp_weights(path: str | Path) -> MlpWeights:
    """Read the probe-weights JSON file."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    layers = []
    for spec in doc["layers"]:
        in_dim, out_dim = int(spec["in"]), int(spec["out"])
        weight = np.asarray(spec["w"], dtype=np.float64).reshape(out_dim, in_dim)
        bias = np.asarray(spec["b"], dtype=np.float64)
        layers.append(MlpLayer(in_dim, out_dim, weight, bias, spec["act"]))
    return MlpWeights(tuple(layers))


def save_mlp_weights(weights: MlpWeights, path: str | Path) -> None:
    """Write the probe-weights JSON file."""
    doc = {
        "layers": [
            {
                "in": layer.in_dim,
                "out": layer.out_dim,
                "w": [float(v) for v in layer.weight.reshape(-1)],
                "b": [float(v) for v in layer.bias],
                "act": layer.activation,
            }
            for layer in weights.layers
        ]
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def mlp_forward(weights: MlpWeights, vector: Sequence[float] | np.ndarray) -> float:
    """Run the probe on one feature vector; returns the sigmoid output."""
    x = np.asarray(vector, dtype=np.float64)
    if x.shape != (weights.in_dim,):
        raise ValueError(
            f"feature vector has dim {x.shape}, probe expects ({weights.in_dim},)"
        )
    for layer in weights.layers:
        x = _ACTIVATIONS[layer.activation](layer.weight @ x + layer.bias)
    return float(x[0])


class HiddenStateStore:
    """Per-question feature vectors loaded from the hidden-state file.

    File format: JSON Lines with a header line
    ``{"version": 1, "dim": int, "dtype": "f32le"}`` followed by
    ``{"id": str, "vec_b64": base64 little-endian float32}`` records.
    """

    def __init__(self, dim: int, vectors: Mapping[str, np.ndarray]):
        self.dim = dim
        self._vectors = dict(vectors)

    @classmethod
    def from_file(cls, path: str | Path) -> "HiddenStateStore":
        with open(path, encoding="utf-8") as fh:
            header_line = fh.readline()
            try:
                header = json.loads(header_line)
                if header.get("version") != 1 or header.get("dtype") != "f32le":
                    raise ValueError(f"unsupported header: {header}")
                dim = int(header["dim"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}: bad hidden-state header: {exc}") from exc
            vectors: dict[str, np.ndarray] = {}
            for lineno, line in enumerate(fh, 2):
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                vec = np.frombuffer(base64.b64decode(row["vec_b64"]), dtype="<f4")
                if vec.shape != (dim,):
                    raise ValueError(
                        f"{path}:{lineno}: vector dim {vec.shape[0]} != header dim {dim}"
                    )
                if not np.isfinite(vec).all():
                    raise ValueError(f"{path}:{lineno}: non-finite vector")
                vectors[str(row["id"])] = vec.astype(np.float64)
        return cls(dim, vectors)

    def __contains__(self, question_id: str) -> bool:
        return question_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def get(self, question_id: str) -> np.ndarray:
        try:
            return self._vectors[question_id]
        except KeyError:
            raise MissingFeatureError(
                f"no hidden-state record for question {question_id!r}"
            ) from None


def write_hidden_states(
    path: str | Path, dim: int, vectors: Mapping[str, Sequence[float]]
) -> None:
    """Write a hidden-state file (used by tests and fixture tooling)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"version": 1, "dim": dim, "dtype": "f32le"}) + "\n")
        for qid, vec in vectors.items():
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise ValueError(f"vector for {qid!r} has dim {arr.shape}, expected {dim}")
            fh.write(
                json.dumps({"id": qid, "vec_b64": base64.b64encode(arr.tobytes()).decode()})
                + "\n"
            )


def score_probeconf(
    question: QuestionRecord,
    hidden_states: HiddenStateStore,
    weights: MlpWeights,
) -> ScoreValue:
    """Probe confidence: the trained MLP applied to the question's
    pre-extracted hidden-state vector."""
    vector = hidden_states.get(question.id)
    value = mlp_forward(weights, vector)
    return ScoreValue(ScorerKind.PROBECONF, value, HIGHER_EXITS, {"dim": hidden_states.dim})


def _answer_token_count(completion: Completion) -> int:
    """Number of leading tokens that belong to the induced trial answer.

    The continuation starts inside an opened box; tokens at character
    offsets before the matching close brace count. Without a close brace
    every token counts.
    """
    close_at = None
    prefix = matched_brace_prefix(completion.text)
    if prefix is not None:
        close_at = len(prefix)
    count = 0
    pos = 0
    for tok in completion.tokens:
        if close_at is not None and pos >= close_at:
            break
        count += 1
        pos += len(tok.token_text)
    return count


def score_deer(
    question: QuestionRecord,
    backend: CompletionBackend,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    params: SamplingParams = SamplingParams(),
    thoughts: str | None = None,
) -> ScoreValue:
    """Geometric-mean top-token probability over the induced trial answer.

    The trial answer is generated greedily from the boxed-answer stem; each
    answer token contributes its position's maximum predicted probability
    (the top-1 alternative), and the score is the geometric mean, computed
    in log space.
    """
    prompt = _monitor_prompt(PromptKind.DEER_INDUCE, question, markers, fake, thoughts)
    reply = backend.complete(prompt, greedy_params(params, INDUCED_MAX_TOKENS), ROLE_REASONER)
    n_answer = _answer_token_count(reply)
    trial = matched_brace_prefix(reply.text)
    aux: dict[str, Any] = {"trial_answer": trial if trial is not None else reply.text}
    if n_answer == 0:
        aux["empty_answer"] = True
        return ScoreValue(ScorerKind.DEER, 0.0, HIGHER_EXITS, aux)
    max_probs = [math.exp(tok.top1_logprob) for tok in reply.tokens[:n_answer]]
    value = geometric_mean_probs(max_probs)
    aux["token_max_probs"] = max_probs
    return ScoreValue(ScorerKind.DEER, value, HIGHER_EXITS, aux)


def geometric_mean_probs(probs: Sequence[float]) -> float:
    """Geometric mean of probabilities, computed in log space so long
    answers cannot underflow the running product."""
    if not probs:
        raise ValueError("need at least one probability")
    if any(p <= 0.0 or p > 1.0 for p in probs):
        raise ValueError("probabilities must lie in (0, 1]")
    return math.exp(sum(math.log(p) for p in probs) / len(probs))


def score_entropy(
    question: QuestionRecord,
    backend: CompletionBackend,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    params: SamplingParams = SamplingParams(),
    thoughts: str | None = None,
) -> ScoreValue:
    """Mean per-token surprisal term -p*log2(p) over the induced answer.

    ``p`` is the realized token's probability. The mean is bounded by
    ``ENTROPY_CEILING`` (each term maximizes at p = 1/e); an empty
    continuation scores the ceiling itself (maximal uncertainty).
    """
    prompt = _monitor_prompt(PromptKind.ENTROPY_CONTEXT, question, markers, fake, thoughts)
    reply = backend.complete(prompt, greedy_params(params, INDUCED_MAX_TOKENS), ROLE_REASONER)
    aux: dict[str, Any] = {"trial_answer": reply.text}
    if not reply.tokens:
        aux["empty_answer"] = True
        return ScoreValue(ScorerKind.ENTROPY, ENTROPY_CEILING, LOWER_EXITS, aux)
    terms = []
    for tok in reply.tokens:
        p = math.exp(tok.logprob)
        terms.append(-p * math.log2(p) if p > 0.0 else 0.0)
    value = sum(terms) / len(terms)
    aux["token_terms"] = terms
    return ScoreValue(ScorerKind.ENTROPY, value, LOWER_EXITS, aux)


# ---------------------------------------------------------------------------
# Random baseline
# ---------------------------------------------------------------------------


def compute_score(
    kind: ScorerKind,
    question: QuestionRecord,
    *,
    backend: CompletionBackend | None = None,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
    params: SamplingParams = SamplingParams(),
    seed: int = 0,
    dynasor_samples: int = 3,
    p_exit: float = 0.5,
    hidden_states: "HiddenStateStore | None" = None,
    probe_weights: "MlpWeights | None" = None,
    thoughts: str | None = None,
) -> ScoreValue:
    """Uniform dispatch to one scorer with the run's shared context.

    ``thoughts=None`` scores the zero-step (pre-written thought) context;
    a string scores an in-progress reasoning trace.
    """
    if kind in BACKEND_SCORERS:
        if backend is None:
            raise ValueError(f"{kind.value} requires a completion backend")
        if kind is ScorerKind.FLASHTHINK:
            return score_flashthink(question, backend, markers, fake, params, thoughts)
        if kind is ScorerKind.PROMPTCONF:
            return score_promptconf(question, backend, markers, fake, params, thoughts)
        if kind is ScorerKind.DYNASOR:
            return score_dynasor(
                question, backend, markers, fake, params, dynasor_samples, seed, thoughts
            )
        if kind is ScorerKind.PREJUDGE:
            return score_prejudge(question, backend, markers, fake, params, thoughts)
        if kind is ScorerKind.DEER:
            return score_deer(question, backend, markers, fake, params, thoughts)
        if kind is ScorerKind.ENTROPY:
            return score_entropy(question, backend, markers, fake, params, thoughts)
    if kind is ScorerKind.PROBECONF:
        if thoughts is not None:
            raise ValueError(
                "the probe scorer has no per-chunk feature source; it only"
                " scores the zero-step context"
            )
        if hidden_states is None or probe_weights is None:
            raise MissingFeatureError(
                "probe scoring needs a hidden-state file and probe weights"
            )
        return score_probeconf(question, hidden_states, probe_weights)
    if kind is ScorerKind.RANDOM:
        return score_random(question, p_exit, seed)
    raise ValueError(f"unknown scorer kind: {kind!r}")  # pragma: no cover


def random_unit(seed: int, question_id: str) -> float:
    """Uniform draw in [0, 1) keyed on (seed, question id); order-independent."""
    digest = hashlib.sha256(f"random:{seed}:{question_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def score_random(
    question: QuestionRecord, p_exit: float, seed: int = 0
) -> ScoreValue:
    """Bernoulli exit flag with probability ``p_exit``, drawn from a
    counter-based generator so results are reproducible and order-free."""
    if not 0.0 <= p_exit <= 1.0:
        raise ValueError(f"p_exit must be in [0,1], got {p_exit}")
    u = random_unit(seed, question.id)
    value = 1.0 if u < p_exit else 0.0
    return ScoreValue(ScorerKind.RANDOM, value, HIGHER_EXITS, {"u": u, "p_exit": p_exit})
