"""Prompt construction for the two generation modes and the seven exit monitors.

Every prompt this package sends to a completion endpoint is rendered here.
Rendering is pure string assembly: chat markers are injected from a
:class:`ChatMarkers` value, the question text is inserted verbatim, and the
resulting bytes are pinned by golden files under ``thinkgate/golden/``
(one per :class:`PromptKind`, rendered against the ``{Question}``
placeholder).

Layout policy: one blank line between logical blocks, single newlines
inside a block, no trailing whitespace.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

logger = logging.getLogger(__name__)

#: Step-by-step instruction shared by every reasoning-mode prompt.
STEP_INSTRUCTION = (
    "Please reason step by step, and put your final answer within \\boxed{}."
)

#: Default text of the pre-written thought used to skip the thinking phase.
DEFAULT_FAKE_TEXT = "Okay, I think I have finished thinking."

#: Stem that induces an immediate trial answer (the model continues inside the box).
INDUCED_ANSWER_STEM = "The final answer is \\boxed{"

#: Stem appended by the agreement probe (same boxed continuation trick).
PROBE_ANSWER_STEM = (
    "Oh, I suddenly got the answer to the whole problem, Final Answer: \\boxed{"
)

#: Stem the confidence-bin prompt ends with; the model continues with a digit.
CONFIDENCE_STEM = "Confidence: 0."

#: Stem the pre-judge prompt ends with; the model continues with true/false.
PREJUDGE_STEM = "{'require_slow_thinking':"


class PromptKind(enum.Enum):
    """The nine prompt shapes the harness can render."""

    THINKING = "thinking"
    NOTHINKING = "nothinking"
    FLASHTHINK_VERIFIER = "flashthink_verifier"
    PROMPTCONF = "promptconf"
    DYNASOR_PROBE = "dynasor_probe"
    PREJUDGE = "prejudge"
    PROBECONF_CONTEXT = "probeconf_context"
    DEER_INDUCE = "deer_induce"
    ENTROPY_CONTEXT = "entropy_context"


@dataclass(frozen=True)
class ChatMarkers:
    """Per-model-family chat delimiters.

    Defaults are the generic placeholders the templates were written
    against; real deployments override them per model family (see
    :meth:`for_model`).
    """

    bos: str = "<BOS_TOKEN>"
    user_open: str = "<|USER|>"
    assistant_open: str = "<|Assistant|>"
    think_open: str = "<think>"
    think_close: str = "</think>"

    def __post_init__(self) -> None:
        if not self.think_open or not self.think_close:
            raise ValueError("think_open and think_close must be non-empty")
        if self.think_open == self.think_close:
            raise ValueError("think_open and think_close must be distinct")

    @classmethod
    def for_model(cls, family: str) -> "ChatMarkers":
        """Return the marker preset for a known model family."""
        presets = {
            "generic": cls(),
            "deepseek-r1-distill": cls(
                bos="<｜begin▁of▁sentence｜>",
                user_open="<｜User｜>",
                assistant_open="<｜Assistant｜>",
            ),
        }
        try:
            return presets[family]
        except KeyError:
            raise ValueError(
                f"unknown marker family {family!r}; known: {sorted(presets)}"
            ) from None


@dataclass(frozen=True)
class FakeThought:
    """The pre-written thought placed inside the think block to skip reasoning.

    An empty ``text`` renders the empty-block variant
    (``<think></think>`` with no separators).
    """

    text: str = DEFAULT_FAKE_TEXT


DEFAULT_MARKERS = ChatMarkers()
DEFAULT_FAKE = FakeThought()

#: Linguistic labels for the ten confidence bins, by bin lower bound (tenths).
CONFIDENCE_BIN_LABELS = (
    "Almost no chance",
    "Highly unlikely",
    "Chances are slight",
    "Unlikely",
    "Less than even",
    "Better than even",
    "Likely",
    "Very good chance",
    "Highly likely",
    "Almost certain",
)

_CONFIDENCE_BIN_LINES = "\n".join(
    f'- "{label}" ({low / 10:.1f}-{(low + 1) / 10:.1f})'
    for low, label in enumerate(CONFIDENCE_BIN_LABELS)
)


def _question_block(question_text: str, markers: ChatMarkers) -> str:
    """User turn for reasoning-mode prompts: question + step instruction."""
    return (
        f"{markers.bos}{markers.user_open}{question_text}"
        f"\n\n{STEP_INSTRUCTION}\n\n{markers.assistant_open}"
    )


def _fake_think_block(fake_text: str, markers: ChatMarkers, *, closed: bool) -> str:
    """Think block holding the pre-written thought; optionally pre-closed."""
    if not fake_text:
        return markers.think_open + (markers.think_close if closed else "")
    block = f"{markers.think_open}\n\n{fake_text}"
    if closed:
        block += f"\n\n{markers.think_close}"
    return block


def render_prompt(
    kind: PromptKind,
    question_text: str,
    markers: ChatMarkers = DEFAULT_MARKERS,
    fake: FakeThought = DEFAULT_FAKE,
) -> str:
    """Render the full input string for one prompt kind.

    ``question_text`` is inserted verbatim; no escaping is performed.
    Questions that already contain a think marker are rendered as-is but
    logged as a warning, since they can confuse downstream parsing.
    """
    if not isinstance(kind, PromptKind):
        raise ValueError(f"unknown prompt kind: {kind!r}")
    if not question_text:
        raise ValueError("question text must be non-empty")
    if markers.think_close in question_text or markers.think_open in question_text:
        logger.warning(
            "question contains a think marker; rendering verbatim: %.60r",
            question_text,
        )

    m = markers
    q = _question_block(question_text, m)

    if kind is PromptKind.THINKING:
        return (
            f"{m.bos}{m.user_open}{question_text}\n{STEP_INSTRUCTION}\n"
            f"{m.assistant_open}{m.think_open}"
        )

    if kind in (PromptKind.NOTHINKING, PromptKind.PROBECONF_CONTEXT):
        return f"{q}{_fake_think_block(fake.text, m, closed=True)}"

    if kind is PromptKind.FLASHTHINK_VERIFIER:
        return (
            f"{m.bos}{m.user_open}\n"
            "Based on the following question and thought, please judge whether"
            " the thought is sufficient to support solving the question."
            " Please directly output yes or no instead of outputting other"
            " content.\n"
            "### Question\n"
            f"{question_text}\n"
            "### Thought\n"
            f"{fake.text}\n"
            f"{m.assistant_open}{m.think_open}"
        )

    if kind is PromptKind.PROMPTCONF:
        return (
            f"{m.bos}{m.user_open}\n\n"
            "For the following question, classify your confidence into one of"
            " the following classes based on how likely your answer is to be"
            " correct:\n"
            f"{_CONFIDENCE_BIN_LINES}\n"
            "Each category reflects the probability that your answer is"
            " correct.\n"
            "At the end of your output, format your answer and confidence as\n"
            "Confidence: $SCORE\n"
            "where SCORE is one of the probability ranges of the scores"
            " above.\n"
            "Here is the question:\n"
            f"{question_text}\n\n"
            f"{m.assistant_open}{m.think_open}\n{m.think_close}\n"
            f"{CONFIDENCE_STEM}"
        )

    if kind is PromptKind.DYNASOR_PROBE:
        return f"{q}{_fake_think_block(fake.text, m, closed=False)}\n\n{PROBE_ANSWER_STEM}"

    if kind is PromptKind.PREJUDGE:
        return (
            f"{m.bos}{m.user_open}\n\n"
            "You are a math problem solver. For the following question,"
            " determine if it requires slow thinking or can be solved quickly."
            " You do not need to give me any explanation, just give me a json"
            " with the following keys: require_slow_thinking.\n"
            "For example: {'require_slow_thinking': true}\n"
            "Here is the question:\n"
            f"{question_text}\n\n"
            f"{m.assistant_open}{m.think_open}\n{m.think_close}\n"
            f"{PREJUDGE_STEM}"
        )

    if kind is PromptKind.DEER_INDUCE:
        return (
            f"{q}{_fake_think_block(fake.text, m, closed=True)}\n\n"
            f"**Final Answer**\n\n{INDUCED_ANSWER_STEM}"
        )

    if kind is PromptKind.ENTROPY_CONTEXT:
        return f"{q}{_fake_think_block(fake.text, m, closed=False)}"

    raise ValueError(f"unknown prompt kind: {kind!r}")  # pragma: no cover


def render_monitor_prompt(
    kind: PromptKind,
    question_text: str,
    thoughts: str,
    markers: ChatMarkers = DEFAULT_MARKERS,
) -> str:
    """Render a monitor prompt over an in-progress reasoning trace.

    This is the iterative-exit counterpart of :func:`render_prompt`: the
    accumulated ``thoughts`` take the slot the pre-written thought occupies
    in the zero-step templates (for the confidence-bin and pre-judge
    monitors, whose zero-step think block is empty, the thoughts fill that
    block instead).
    """
    m = markers
    q = _question_block(question_text, m)

    if kind is PromptKind.FLASHTHINK_VERIFIER:
        return render_prompt(kind, question_text, m, FakeThought(thoughts))

    if kind is PromptKind.PROMPTCONF:
        zero = render_prompt(kind, question_text, m)
        head, _, tail = zero.rpartition(f"{m.think_open}\n{m.think_close}")
        return f"{head}{m.think_open}\n{thoughts}\n{m.think_close}{tail}"

    if kind is PromptKind.PREJUDGE:
        # The pre-judge monitor conditions on the question alone.
        return render_prompt(kind, question_text, m)

    if kind is PromptKind.DYNASOR_PROBE:
        return f"{q}{m.think_open}\n\n{thoughts}\n\n{PROBE_ANSWER_STEM}"

    if kind is PromptKind.DEER_INDUCE:
        return (
            f"{q}{m.think_open}\n\n{thoughts}\n\n{m.think_close}\n\n"
            f"**Final Answer**\n\n{INDUCED_ANSWER_STEM}"
        )

    if kind is PromptKind.ENTROPY_CONTEXT:
        return f"{q}{m.think_open}\n\n{thoughts}"

    raise ValueError(f"{kind} is not a monitor prompt kind")


def render_early_exit_suffix(markers: ChatMarkers = DEFAULT_MARKERS) -> str:
    """Terminator appended to a truncated trace to force the conclusion phase."""
    return markers.think_close + "\n"


def golden_name(kind: PromptKind) -> str:
    """Golden-file basename for one prompt kind."""
    return f"{kind.value}.txt"
