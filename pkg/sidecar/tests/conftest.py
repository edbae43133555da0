"""Shared sidecar fixtures: a tiny offline model and a small dataset."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from thinkgate.prompting import PromptKind, render_prompt
from thinkgate_sidecar import tiny_char_model

N_QUESTIONS = 5


def question_text(i: int) -> str:
    return f"What is {i} plus {i}?"


@pytest.fixture(scope="session")
def dataset_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "dataset.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(1, N_QUESTIONS + 1):
            fh.write(
                json.dumps(
                    {
                        "id": f"s{i:02d}",
                        "question": question_text(i),
                        "answer": str(2 * i),
                        "answer_type": "numeric",
                        "dataset": "tiny",
                    }
                )
                + "\n"
            )
    return path


@pytest.fixture(scope="session")
def handle(dataset_path):
    # Alphabet covers every rendered template over every dataset question.
    corpus = dataset_path.read_text(encoding="utf-8")
    alphabet = corpus + "".join(
        render_prompt(kind, question_text(i))
        for kind in PromptKind
        for i in range(1, N_QUESTIONS + 1)
    )
    return tiny_char_model(alphabet, hidden_dim=8, seed=1)
