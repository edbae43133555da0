"""Shared fixtures: a 20-question dataset with a fully scripted mock backend."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from thinkgate.answers import QuestionRecord
from thinkgate.backend import MockBackend, SamplingParams
from thinkgate.fixtures import FixtureBuilder
from thinkgate.scorers import MlpLayer, MlpWeights, save_mlp_weights, write_hidden_states

N_QUESTIONS = 20
HIDDEN_DIM = 4


@dataclass
class ScriptedCorpus:
    """Everything a pipeline test needs, plus the script's ground truth."""

    questions: list[QuestionRecord]
    builder: FixtureBuilder
    dataset_path: Path
    fixture_path: Path
    hidden_path: Path
    weights_path: Path
    params: SamplingParams
    seed: int
    # Per-question ground truth the script was built from.
    truth: dict[str, dict] = field(default_factory=dict)

    def backend(self) -> MockBackend:
        return MockBackend(self.builder.entries)

    def config_dict(self, cache_dir: Path, out_dir: Path) -> dict:
        return {
            "dataset_path": str(self.dataset_path),
            "cache_dir": str(cache_dir),
            "out_dir": str(out_dir),
            "backend": "mock",
            "fixture_path": str(self.fixture_path),
            "seed": self.seed,
            "hidden_states_path": str(self.hidden_path),
            "probe_weights_path": str(self.weights_path),
        }


def _dynasor_answers(i: int, gold: str) -> list[str]:
    # Cycle through unanimous / two-of-three / all-distinct agreement.
    variant = i % 3
    if variant == 0:
        return [gold, gold, gold]
    if variant == 1:
        return [gold, gold, str(int(gold) + 7)]
    return [gold, str(int(gold) + 7), str(int(gold) + 11)]


def build_corpus(root: Path, seed: int = 7) -> ScriptedCorpus:
    params = SamplingParams()
    builder = FixtureBuilder(params=params, seed=seed)
    questions: list[QuestionRecord] = []
    truth: dict[str, dict] = {}
    rng = np.random.default_rng(seed)

    dataset_path = root / "dataset.jsonl"
    with open(dataset_path, "w", encoding="utf-8") as fh:
        for i in range(1, N_QUESTIONS + 1):
            qid = f"q{i:02d}"
            gold = str(i)
            question = QuestionRecord(
                id=qid,
                text=f"What is {i} + 0?",
                gold=gold,
                answer_type="numeric",
                dataset="toy",
            )
            questions.append(question)
            fh.write(
                json.dumps(
                    {
                        "id": qid,
                        "question": question.text,
                        "answer": gold,
                        "answer_type": "numeric",
                        "dataset": "toy",
                    }
                )
                + "\n"
            )

            thinking_correct = i % 5 != 0
            nothinking_correct = i % 2 == 0
            think_answer = gold if thinking_correct else str(i + 100)
            nothink_answer = gold if nothinking_correct else str(i + 200)
            thinking_text = (
                f"First I consider the sum carefully.\n\n"
                f"Adding zero leaves {i} unchanged, so nothing moves.\n\n"
                f"</think>\n\nThe final answer is \\boxed{{{think_answer}}}."
            )
            nothinking_text = f"The final answer is \\boxed{{{nothink_answer}}}."

            deer_prob = round(0.30 + 0.65 * (i - 1) / (N_QUESTIONS - 1), 6)
            entropy_prob = round(0.98 - 0.90 * (i - 1) / (N_QUESTIONS - 1), 6)
            flashthink_reply = "yes" if i % 3 == 0 else "no"
            promptconf_digit = str(i % 10)
            prejudge_reply = " true}" if i % 2 else " false}"
            dynasor = _dynasor_answers(i, gold)

            builder.script_question(
                questions[-1],
                {
                    "thinking": thinking_text,
                    "nothinking": nothinking_text,
                    "flashthink": flashthink_reply,
                    "promptconf": promptconf_digit,
                    "prejudge": prejudge_reply,
                    "deer": [[think_answer, deer_prob]],
                    "entropy": [[nothink_answer, entropy_prob]],
                    "dynasor": dynasor,
                },
            )
            truth[qid] = {
                "thinking_correct": thinking_correct,
                "nothinking_correct": nothinking_correct,
                "deer_prob": deer_prob,
                "entropy_prob": entropy_prob,
                "flashthink": 1.0 if flashthink_reply == "yes" else 0.0,
                "promptconf": int(promptconf_digit) / 10,
                "prejudge": 0.0 if "true" in prejudge_reply else 1.0,
                "dynasor": dynasor,
            }

    fixture_path = root / "fixture.jsonl"
    builder.write(fixture_path)

    hidden_path = root / "hidden.jsonl"
    vectors = {q.id: rng.normal(size=HIDDEN_DIM).astype("float32") for q in questions}
    write_hidden_states(hidden_path, HIDDEN_DIM, vectors)
    for q in questions:
        truth[q.id]["hidden_vector"] = vectors[q.id].astype("float64")

    weights_path = root / "probe.json"
    weights = MlpWeights(
        (
            MlpLayer(
                in_dim=HIDDEN_DIM,
                out_dim=1,
                weight=np.array([[0.8, -0.5, 0.3, 0.1]]),
                bias=np.array([0.05]),
                activation="sigmoid",
            ),
        )
    )
    save_mlp_weights(weights, weights_path)

    return ScriptedCorpus(
        questions=questions,
        builder=builder,
        dataset_path=dataset_path,
        fixture_path=fixture_path,
        hidden_path=hidden_path,
        weights_path=weights_path,
        params=params,
        seed=seed,
        truth=truth,
    )


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> ScriptedCorpus:
    return build_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture()
def question() -> QuestionRecord:
    return QuestionRecord(id="q", text="What is 6 times 7?", gold="42", answer_type="numeric")
