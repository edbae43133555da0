"""Scorer formulas against independent oracles, plus parse and decision rules."""

from __future__ import annotations

import math

import numpy as np
import pytest

from thinkgate.answers import QuestionRecord
from thinkgate.fixtures import FixtureBuilder
from thinkgate.scorers import (
    ENTROPY_CEILING,
    HIGHER_EXITS,
    LOWER_EXITS,
    HiddenStateStore,
    MissingFeatureError,
    MlpLayer,
    MlpWeights,
    ScoreValue,
    ScorerKind,
    compute_score,
    decide,
    dynasor_sample_index,
    geometric_mean_probs,
    largest_agreement,
    load_mlp_weights,
    mlp_forward,
    random_unit,
    save_mlp_weights,
    score_deer,
    score_dynasor,
    score_entropy,
    score_flashthink,
    score_prejudge,
    score_probeconf,
    score_promptconf,
    score_random,
    write_hidden_states,
)


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def make_question(qid="q", text="What is 6 times 7?", gold="42"):
    return QuestionRecord(id=qid, text=text, gold=gold, answer_type="numeric")


class TestDecide:
    def test_strictly_above_threshold_exits(self):
        score = ScoreValue(ScorerKind.DEER, 0.85, HIGHER_EXITS)
        assert decide(score, 0.8).exit

    def test_boundary_does_not_exit(self):
        score = ScoreValue(ScorerKind.DEER, 0.8, HIGHER_EXITS)
        assert not decide(score, 0.8).exit

    def test_entropy_boundary_exits(self):
        score = ScoreValue(ScorerKind.ENTROPY, 0.5 * ENTROPY_CEILING, LOWER_EXITS)
        assert decide(score, 0.0, alpha=0.5).exit

    def test_entropy_just_above_boundary_continues(self):
        above = math.nextafter(0.5 * ENTROPY_CEILING, 1.0)
        score = ScoreValue(ScorerKind.ENTROPY, above, LOWER_EXITS)
        assert not decide(score, 0.0, alpha=0.5).exit

    def test_alpha_one_always_exits_entropy(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            value = float(rng.uniform(0, ENTROPY_CEILING))
            assert decide(ScoreValue(ScorerKind.ENTROPY, value, LOWER_EXITS), 0.5, 1.0).exit

    def test_lambda_monotonicity(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            value = float(rng.uniform(0, 1))
            lam1, lam2 = sorted(rng.uniform(0, 1, size=2))
            score = ScoreValue(ScorerKind.DEER, value, HIGHER_EXITS)
            if decide(score, lam2).exit:
                assert decide(score, lam1).exit

    def test_parameter_validation(self):
        score = ScoreValue(ScorerKind.DEER, 0.5, HIGHER_EXITS)
        with pytest.raises(ValueError):
            decide(score, 1.5)
        with pytest.raises(ValueError):
            decide(score, 0.5, alpha=-0.1)


class TestGeometricMean:
    def test_hand_example(self):
        assert geometric_mean_probs([0.9, 0.8]) == pytest.approx(math.sqrt(0.72), abs=1e-15)

    def test_single_certain_token(self):
        assert geometric_mean_probs([1.0]) == 1.0

    def test_equal_probs_idempotent(self):
        for p in (0.1, 0.5, 0.99):
            assert geometric_mean_probs([p] * 7) == pytest.approx(p, abs=1e-12)

    def test_log_space_equivalence_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            probs = rng.uniform(0.01, 1.0, size=rng.integers(1, 65)).tolist()
            value = geometric_mean_probs(probs)
            log_mean = float(np.mean(np.log(probs)))
            assert abs(math.log(value) - log_mean) < 1e-12

    def test_am_gm_inequality(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            probs = rng.uniform(0.01, 1.0, size=rng.integers(1, 33)).tolist()
            assert geometric_mean_probs(probs) <= float(np.mean(probs)) + 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            geometric_mean_probs([])
        with pytest.raises(ValueError):
            geometric_mean_probs([0.0])


class TestFlashthink:
    @pytest.mark.parametrize(
        "reply,value,failed",
        [
            ("yes", 1.0, False),
            ("Yes, it is.", 1.0, False),
            ("No.", 0.0, False),
            ("  NO WAY", 0.0, False),
            ("maybe", 0.0, True),
            ("", 0.0, True),
            ("42", 0.0, True),
        ],
    )
    def test_parsing(self, reply, value, failed):
        question = make_question()
        builder = FixtureBuilder()
        builder.add_flashthink(question, reply)
        score = score_flashthink(question, builder.backend())
        assert score.value == value
        assert score.aux.get("parse_failed", False) is failed
        assert score.orientation == HIGHER_EXITS


class TestPromptconf:
    @pytest.mark.parametrize(
        "continuation,value,label",
        [
            ("9", 0.9, "Almost certain"),
            ("0", 0.0, "Almost no chance"),
            ("5 because", 0.5, "Better than even"),
        ],
    )
    def test_bins(self, continuation, value, label):
        question = make_question()
        builder = FixtureBuilder()
        builder.add_promptconf(question, continuation)
        score = score_promptconf(question, builder.backend())
        assert score.value == pytest.approx(value)
        assert score.aux["bin_label"] == label

    def test_non_digit_falls_back(self):
        question = make_question()
        builder = FixtureBuilder()
        builder.add_promptconf(question, "x")
        score = score_promptconf(question, builder.backend())
        assert score.value == 0.0
        assert score.aux["parse_failed"]


class TestPrejudge:
    @pytest.mark.parametrize(
        "continuation,value,failed",
        [
            (" true}", 0.0, False),
            (" false}", 1.0, False),
            (" null}", 0.0, True),
        ],
    )
    def test_parsing(self, continuation, value, failed):
        question = make_question()
        builder = FixtureBuilder()
        builder.add_prejudge(question, continuation)
        score = score_prejudge(question, builder.backend())
        assert score.value == value
        assert score.aux.get("parse_failed", False) is failed

    def test_literal_beyond_16_tokens_ignored(self):
        question = make_question()
        builder = FixtureBuilder()
        builder.add_prejudge(question, "a b c d e f g h i j k l m n o p true}")
        score = score_prejudge(question, builder.backend())
        assert score.value == 0.0
        assert score.aux["parse_failed"]


class TestDynasor:
    def _score(self, answers, qid="q"):
        question = make_question(qid=qid)
        builder = FixtureBuilder(seed=11)
        builder.add_dynasor(question, answers)
        return score_dynasor(question, builder.backend(), seed=11)

    def test_unanimous(self):
        assert self._score(["7", "7", "7"]).value == pytest.approx(1.0)

    def test_two_of_three(self):
        assert self._score(["7", "7", "9"]).value == pytest.approx(2 / 3)

    def test_all_distinct(self):
        assert self._score(["7", "9", "11"]).value == pytest.approx(1 / 3)

    def test_equivalence_not_string_equality(self):
        assert self._score(["0.5", "\\frac{1}{2}", "9"]).value == pytest.approx(2 / 3)

    def test_unparsed_samples_are_singletons(self):
        question = make_question()
        builder = FixtureBuilder(seed=11)
        prompt_key = builder.add_dynasor(question, ["7", "7", "7"])
        # Overwrite one draw with a never-closing continuation.
        builder.entries[prompt_key[2]]["text"] = "no closing brace"
        score = score_dynasor(question, builder.backend(), seed=11)
        assert score.value == pytest.approx(2 / 3)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            trials = [str(int(rng.integers(0, 4))) for _ in range(3)]
            best = max(sum(a == b for b in trials) for a in trials)
            assert largest_agreement(trials, "numeric") == best

    def test_sample_indices_are_order_free(self):
        assert dynasor_sample_index(1, "q", 0) == dynasor_sample_index(1, "q", 0)
        assert dynasor_sample_index(1, "q", 0) != dynasor_sample_index(1, "q", 1)
        assert dynasor_sample_index(1, "q", 0) != dynasor_sample_index(2, "q", 0)


class TestMlpForward:
    def test_zero_network(self):
        weights = MlpWeights(
            (MlpLayer(3, 1, np.zeros((1, 3)), np.zeros(1), "sigmoid"),)
        )
        assert mlp_forward(weights, [1.0, -2.0, 3.0]) == pytest.approx(0.5)

    def test_single_layer_hand_computation(self):
        weights = MlpWeights((MlpLayer(1, 1, np.array([[2.0]]), np.array([-1.0]), "sigmoid"),))
        assert mlp_forward(weights, [1.0]) == pytest.approx(_sigmoid(1.0), abs=1e-15)

    def test_two_layer_hand_computation(self):
        # 2 -> 2 (relu) -> 1 (sigmoid), evaluated by hand:
        # h = relu([[1,2],[3,-4]] @ [1,2] + [0,1]) = relu([5, -4]) = [5, 0]
        # out = sigmoid([0.5, -1] @ [5, 0] + 0.25) = sigmoid(2.75)
        weights = MlpWeights(
            (
                MlpLayer(2, 2, np.array([[1.0, 2.0], [3.0, -4.0]]), np.array([0.0, 1.0]), "relu"),
                MlpLayer(2, 1, np.array([[0.5, -1.0]]), np.array([0.25]), "sigmoid"),
            )
        )
        assert mlp_forward(weights, [1.0, 2.0]) == pytest.approx(_sigmoid(2.75), abs=1e-15)

    def test_dimension_mismatch_names_dims(self):
        weights = MlpWeights((MlpLayer(2, 1, np.zeros((1, 2)), np.zeros(1), "sigmoid"),))
        with pytest.raises(ValueError, match="2"):
            mlp_forward(weights, [1.0, 2.0, 3.0])

    def test_weights_file_round_trip(self, tmp_path):
        weights = MlpWeights(
            (
                MlpLayer(2, 2, np.array([[1.5, -0.5], [0.25, 2.0]]), np.array([0.1, -0.2]), "relu"),
                MlpLayer(2, 1, np.array([[0.3, 0.7]]), np.array([0.0]), "sigmoid"),
            )
        )
        path = tmp_path / "w.json"
        save_mlp_weights(weights, path)
        loaded = load_mlp_weights(path)
        x = [0.3, -1.2]
        assert mlp_forward(loaded, x) == pytest.approx(mlp_forward(weights, x), abs=1e-15)

    def test_final_layer_must_be_sigmoid_scalar(self):
        with pytest.raises(ValueError):
            MlpWeights((MlpLayer(2, 1, np.zeros((1, 2)), np.zeros(1), "relu"),))
        with pytest.raises(ValueError):
            MlpWeights((MlpLayer(2, 2, np.zeros((2, 2)), np.zeros(2), "sigmoid"),))


class TestProbeconf:
    def _store(self, tmp_path, vectors):
        path = tmp_path / "h.jsonl"
        write_hidden_states(path, 4, vectors)
        return HiddenStateStore.from_file(path)

    def _weights(self):
        return MlpWeights((MlpLayer(4, 1, np.zeros((1, 4)), np.zeros(1), "sigmoid"),))

    def test_zero_network_scores_half(self, tmp_path):
        store = self._store(tmp_path, {"q": [1.0, 2.0, 3.0, 4.0]})
        score = score_probeconf(make_question(), store, self._weights())
        assert score.value == pytest.approx(0.5)

    def test_missing_record_raises(self, tmp_path):
        store = self._store(tmp_path, {"other": [0.0] * 4})
        with pytest.raises(MissingFeatureError):
            score_probeconf(make_question(), store, self._weights())

    def test_matches_forward_oracle(self, tmp_path):
        rng = np.random.default_rng(5)
        vec = rng.normal(size=4)
        store = self._store(tmp_path, {"q": vec})
        weights = MlpWeights(
            (MlpLayer(4, 1, rng.normal(size=(1, 4)), rng.normal(size=1), "sigmoid"),)
        )
        score = score_probeconf(make_question(), store, weights)
        # float32 round trip through the hidden-state file
        stored = np.asarray(vec, dtype=np.float32).astype(np.float64)
        assert score.value == pytest.approx(mlp_forward(weights, stored), abs=1e-12)

    def test_non_finite_vector_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            self._store(tmp_path, {"q": [float("nan")] * 4})


class TestDeer:
    def _score(self, pieces):
        question = make_question()
        builder = FixtureBuilder()
        builder.add_deer(question, pieces)
        return score_deer(question, builder.backend())

    def test_hand_geometric_mean(self):
        score = self._score([["4", 0.9], ["2", 0.8]])
        assert score.value == pytest.approx(0.72**0.5, abs=1e-12)
        assert score.aux["trial_answer"] == "42"

    def test_single_certain_token(self):
        assert self._score([["42", 1.0]]).value == pytest.approx(1.0)

    def test_equal_probs(self):
        assert self._score([["4", 0.7], ["2", 0.7]]).value == pytest.approx(0.7, abs=1e-12)

    def test_empty_answer(self):
        question = make_question()
        builder = FixtureBuilder()
        from thinkgate.backend import greedy_params
        from thinkgate.prompting import PromptKind, render_prompt
        from thinkgate.scorers import INDUCED_MAX_TOKENS

        prompt = render_prompt(PromptKind.DEER_INDUCE, question.text)
        builder.add(prompt, greedy_params(builder.params, INDUCED_MAX_TOKENS), "}")
        score = score_deer(question, builder.backend())
        assert score.value == 0.0
        assert score.aux["empty_answer"]

    def test_uses_top1_not_realized(self):
        # Realized token has lower probability than the position's best.
        question = make_question()
        builder = FixtureBuilder()
        from thinkgate.backend import greedy_params
        from thinkgate.prompting import PromptKind, render_prompt
        from thinkgate.scorers import INDUCED_MAX_TOKENS

        prompt = render_prompt(PromptKind.DEER_INDUCE, question.text)
        tokens = [
            {"t": "42", "lp": math.log(0.3), "top": [["17", math.log(0.6)], ["42", math.log(0.3)]]},
            {"t": "}", "lp": math.log(0.9), "top": [["}", math.log(0.9)]]},
        ]
        builder.add(
            prompt, greedy_params(builder.params, INDUCED_MAX_TOKENS), "42}", tokens=tokens
        )
        score = score_deer(question, builder.backend())
        assert score.value == pytest.approx(0.6, abs=1e-12)


class TestEntropy:
    def _score(self, pieces):
        question = make_question()
        builder = FixtureBuilder()
        builder.add_entropy(question, pieces)
        return score_entropy(question, builder.backend())

    def test_half_probability_token(self):
        score = self._score([["42", 0.5]])
        assert score.value == pytest.approx(0.5, abs=1e-12)
        assert score.orientation == LOWER_EXITS

    def test_certain_token_scores_zero(self):
        assert self._score([["42", 1.0]]).value == 0.0

    def test_bound_holds_on_random_inputs(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            pieces = [["t", float(p)] for p in rng.uniform(0.001, 1.0, size=rng.integers(1, 9))]
            value = self._score(pieces).value
            assert 0.0 <= value <= ENTROPY_CEILING + 1e-15

    def test_mean_matches_direct_recomputation(self):
        pieces = [["a", 0.5], ["b", 0.25], ["c", 0.9]]
        expected = np.mean([-p * math.log2(p) for _, p in pieces])
        assert self._score(pieces).value == pytest.approx(float(expected), abs=1e-12)

    def test_empty_answer_scores_ceiling(self):
        question = make_question()
        builder = FixtureBuilder()
        from thinkgate.backend import greedy_params
        from thinkgate.prompting import PromptKind, render_prompt
        from thinkgate.scorers import INDUCED_MAX_TOKENS

        prompt = render_prompt(PromptKind.ENTROPY_CONTEXT, question.text)
        builder.add(prompt, greedy_params(builder.params, INDUCED_MAX_TOKENS), "")
        score = score_entropy(question, builder.backend())
        assert score.value == pytest.approx(ENTROPY_CEILING)
        assert score.aux["empty_answer"]


class TestRandom:
    def test_degenerate_probabilities(self):
        for i in range(50):
            q = make_question(qid=f"q{i}")
            assert score_random(q, 0.0, seed=1).value == 0.0
            assert score_random(q, 1.0, seed=1).value == 1.0

    def test_binomial_concentration(self):
        n = 10_000
        exits = sum(
            score_random(make_question(qid=f"q{i}"), 0.3, seed=9).value for i in range(n)
        )
        assert abs(exits / n - 0.3) < 0.02

    def test_order_independent_and_reproducible(self):
        a = random_unit(3, "qx")
        b = random_unit(3, "qx")
        assert a == b
        assert random_unit(3, "qx") != random_unit(4, "qx")


class TestComputeScoreDispatch:
    def test_backend_required(self):
        with pytest.raises(ValueError, match="backend"):
            compute_score(ScorerKind.DEER, make_question())

    def test_probeconf_without_store_is_missing_feature(self):
        with pytest.raises(MissingFeatureError):
            compute_score(ScorerKind.PROBECONF, make_question())

    def test_random_dispatch(self):
        score = compute_score(ScorerKind.RANDOM, make_question(), p_exit=1.0, seed=0)
        assert score.value == 1.0
