"""Acceptance gate: one test (and one printed pass/fail line) per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Every tolerance is pinned here, not deferred to calibration.
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from thinkgate.answers import extract_boxed
from thinkgate.gateway import GatewayService, serve_in_thread
from thinkgate.harness import (
    CachingBackend,
    GenerationCache,
    RunConfig,
    build_backend,
    phase_generate,
    phase_score,
    run_pipeline,
)
from thinkgate.metrics import (
    BranchOutcome,
    PairedInstance,
    brier,
    compose_at_threshold,
    ece,
    nothinking_baseline,
    roc_auc,
    sweep_thresholds,
    thinking_baseline,
)
from thinkgate.prompting import PromptKind, golden_name, render_prompt
from thinkgate.scorers import (
    ENTROPY_CEILING,
    HIGHER_EXITS,
    LOWER_EXITS,
    ScoreValue,
    ScorerKind,
    decide,
    geometric_mean_probs,
    largest_agreement,
)

from test_answers import EQUIVALENCE_CASES, EXTRACTION_CASES
from test_metrics import direct_ece, pairwise_auc

GOLDEN_DIR = Path(__file__).resolve().parents[1] / "src" / "thinkgate" / "golden"


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"FAIL  {name}")
        raise
    elapsed = time.perf_counter() - start
    assert elapsed < budget_s, f"{name} took {elapsed:.2f}s (budget {budget_s}s)"
    print(f"PASS  {name}  ({elapsed:.2f}s)")


def make_random_instances(rng, n, orientation=HIGHER_EXITS, scorer=ScorerKind.DEER):
    high = 1.0 if orientation == HIGHER_EXITS else ENTROPY_CEILING
    return [
        PairedInstance(
            question_id=f"q{i}",
            thinking=BranchOutcome(bool(rng.random() < 0.8), int(rng.integers(200, 4000))),
            nothinking=BranchOutcome(bool(rng.random() < 0.55), int(rng.integers(20, 400))),
            scores={scorer: ScoreValue(scorer, float(rng.uniform(0, high)), orientation)},
        )
        for i in range(n)
    ]


def test_template_fidelity():
    with criterion("template fidelity (9 golden files)", budget_s=1.0):
        for kind in PromptKind:
            rendered = render_prompt(kind, "{Question}").encode("utf-8")
            golden = (GOLDEN_DIR / golden_name(kind)).read_bytes()
            assert rendered == golden, f"{kind.value} drifted from its golden file"


def test_scorer_formula_oracles():
    with criterion("scorer formula oracles (geo-mean, entropy bound, agreement)", 5.0):
        rng = np.random.default_rng(101)

        # Log-space geometric mean against the direct product oracle.
        for _ in range(1000):
            probs = rng.uniform(0.01, 1.0, size=int(rng.integers(1, 65)))
            value = geometric_mean_probs(probs.tolist())
            direct = float(np.prod(probs) ** (1.0 / len(probs)))
            assert abs(math.log(value) - float(np.mean(np.log(probs)))) < 1e-12
            assert abs(value - direct) < 1e-9

        # Entropy values stay inside [0, 1/(e ln 2)] and the decision rule
        # flips exactly at the alpha-scaled ceiling.
        for _ in range(1000):
            probs = rng.uniform(1e-6, 1.0, size=int(rng.integers(1, 17)))
            terms = [-p * math.log2(p) for p in probs]
            value = float(np.mean(terms))
            assert 0.0 <= value <= ENTROPY_CEILING + 1e-15
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
            boundary = alpha * ENTROPY_CEILING
            at = ScoreValue(ScorerKind.ENTROPY, boundary, LOWER_EXITS)
            assert decide(at, 0.5, alpha).exit
            if boundary < ENTROPY_CEILING:
                above = ScoreValue(
                    ScorerKind.ENTROPY, math.nextafter(boundary, 2.0), LOWER_EXITS
                )
                assert not decide(above, 0.5, alpha).exit

        # Largest agreement class against brute-force pairwise counting.
        for _ in range(500):
            trials = [str(int(rng.integers(0, 5))) for _ in range(3)]
            brute = max(sum(a == b for b in trials) for a in trials)
            assert largest_agreement(trials, "numeric") == brute


def test_metric_oracles():
    with criterion("metric oracles (roc-auc, ece, brier)", 10.0):
        rng = np.random.default_rng(102)

        for _ in range(100):
            n = int(rng.integers(2, 1001))
            scores = rng.choice(np.linspace(0, 1, 17), size=n)
            labels = rng.random(n) < rng.uniform(0.2, 0.8)
            if labels.all() or not labels.any():
                labels[0] = ~labels[0]
            assert abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-12

        for _ in range(100):
            n = int(rng.integers(1, 400))
            confidences = rng.uniform(0, 1, size=n)
            labels = rng.random(n) < 0.5
            assert abs(
                ece(confidences, labels) - direct_ece(confidences.tolist(), labels.tolist(), 10)
            ) < 1e-12
            expected_brier = sum(
                (c - (1.0 if l else 0.0)) ** 2 for c, l in zip(confidences, labels)
            ) / n
            assert abs(brier(confidences, labels) - expected_brier) < 1e-12

        scores = rng.uniform(0, 1, size=400)
        labels = rng.random(400) < 0.5
        labels[:2] = [True, False]
        base = roc_auc(scores, labels)
        for _ in range(10):
            a, b, c = rng.uniform(0.1, 3.0, size=3)
            transformed = a * scores + b * scores**3 + c * np.exp(scores)
            assert abs(roc_auc(transformed, labels) - base) < 1e-12


def test_composition_oracle():
    with criterion("composition oracle (200 fixtures x 10 thresholds)", 5.0):
        rng = np.random.default_rng(103)
        grid = [i / 10 for i in range(1, 11)]
        for _ in range(200):
            instances = make_random_instances(rng, int(rng.integers(2, 40)))
            points = sweep_thresholds(instances, ScorerKind.DEER, grid)
            for lam, point in zip(grid, points):
                chosen = [
                    inst.nothinking
                    if inst.scores[ScorerKind.DEER].value > lam
                    else inst.thinking
                    for inst in instances
                ]
                exits = sum(
                    inst.scores[ScorerKind.DEER].value > lam for inst in instances
                )
                n = len(instances)
                assert point.accuracy == pytest.approx(
                    sum(b.correct for b in chosen) / n, abs=1e-12
                )
                assert point.mean_tokens == pytest.approx(
                    sum(b.tokens for b in chosen) / n, abs=1e-9
                )
                assert point.nothinking_ratio == pytest.approx(exits / n, abs=1e-12)
            ratios = [p.nothinking_ratio for p in points]
            assert all(x >= y for x, y in zip(ratios, ratios[1:]))


def test_boundary_identities():
    with criterion("boundary identities (all-exit, no-exit, alpha=1)", 2.0):
        rng = np.random.default_rng(104)
        instances = make_random_instances(rng, 50)
        # Scores are strictly inside (0, 1): lambda=0 exits everything,
        # lambda=1 exits nothing.
        for inst in instances:
            assert 0.0 < inst.scores[ScorerKind.DEER].value < 1.0
        low = compose_at_threshold(instances, ScorerKind.DEER, 0.0)
        nothink = nothinking_baseline(instances)
        assert (low.accuracy, low.mean_tokens, low.nothinking_ratio) == (
            nothink.accuracy,
            nothink.mean_tokens,
            1.0,
        )
        high = compose_at_threshold(instances, ScorerKind.DEER, 1.0)
        think = thinking_baseline(instances)
        assert (high.accuracy, high.mean_tokens, high.nothinking_ratio) == (
            think.accuracy,
            think.mean_tokens,
            0.0,
        )

        entropy_instances = make_random_instances(
            rng, 50, orientation=LOWER_EXITS, scorer=ScorerKind.ENTROPY
        )
        full_exit = compose_at_threshold(
            entropy_instances, ScorerKind.ENTROPY, lam=0.5, alpha=1.0
        )
        assert full_exit.nothinking_ratio == 1.0


def test_end_to_end_determinism(corpus, tmp_path):
    with criterion("end-to-end determinism (two runs + resume)", 30.0):
        def snapshot(out_dir: Path) -> dict[str, bytes]:
            return {
                str(p.relative_to(out_dir)): p.read_bytes()
                for p in sorted(out_dir.rglob("*"))
                if p.is_file()
            }

        def full_run(tag: str, interrupt: bool) -> dict[str, bytes]:
            doc = corpus.config_dict(tmp_path / f"cache_{tag}", tmp_path / f"out_{tag}")
            config = RunConfig.from_dict(doc)
            if interrupt:
                # Partial phase 1, then a fresh process picks the cache up.
                cache = GenerationCache(config.cache_dir)
                caching = CachingBackend(build_backend(config), cache)
                phase_generate(config, corpus.questions[:9], caching)
            run_pipeline(config)
            return snapshot(Path(config.out_dir))

        first = full_run("one", interrupt=False)
        second = full_run("two", interrupt=False)
        resumed = full_run("resumed", interrupt=True)
        assert first == second, "two clean runs disagree"
        assert first == resumed, "resumed run disagrees with clean run"
        assert any(name.endswith(".csv") for name in first)
        assert "summary.json" in first and "calibration.json" in first


def test_gateway_consistency(corpus, tmp_path):
    with criterion("gateway consistency with the batch decision path", 10.0):
        doc = corpus.config_dict(tmp_path / "cache", tmp_path / "out")
        config = RunConfig.from_dict(doc)
        cache = GenerationCache(config.cache_dir)
        caching = CachingBackend(build_backend(config), cache)
        phase_generate(config, corpus.questions, caching)
        scores = phase_score(config, corpus.questions, caching)

        for scorer, lam, alpha in (
            (ScorerKind.DEER, 0.6, 1.0),
            (ScorerKind.PROMPTCONF, 0.4, 1.0),
            (ScorerKind.ENTROPY, 0.5, 0.5),
        ):
            service = GatewayService(
                backend=corpus.backend(),
                scorer=scorer,
                lam=lam,
                alpha=alpha,
                params=corpus.params,
                seed=corpus.seed,
            )
            server, port = serve_in_thread(service)
            try:
                import urllib.request

                for q in corpus.questions:
                    batch_exit = decide(scores[q.id][scorer], lam, alpha).exit
                    request = urllib.request.Request(
                        f"http://127.0.0.1:{port}/v1/route",
                        data=json.dumps({"question": q.text, "id": q.id}).encode(),
                        headers={"Content-Type": "application/json"},
                    )
                    with urllib.request.urlopen(request, timeout=10) as response:
                        reply = json.loads(response.read())
                    assert (reply["mode"] == "nothinking") is batch_exit, (
                        f"{scorer.value} gateway/batch mismatch on {q.id}"
                    )
            finally:
                server.shutdown()


def test_answer_grading_suite():
    with criterion("answer grading (hand-labeled cases + 10k fuzz)", 10.0):
        from thinkgate.answers import answers_equivalent

        assert len(EXTRACTION_CASES) + len(EQUIVALENCE_CASES) >= 40
        for text, expected in EXTRACTION_CASES:
            assert extract_boxed(text) == expected, f"extraction case {text!r}"
        for a, b, answer_type, expected in EQUIVALENCE_CASES:
            assert answers_equivalent(a, b, answer_type) is expected, (a, b)
            assert answers_equivalent(b, a, answer_type) is expected, (b, a)

        import random

        rng = random.Random(105)
        alphabet = "\\boxed{}()[]ab c\n$%,./-+e0123456789"
        for _ in range(10_000):
            s = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 80)))
            result = extract_boxed(s)
            assert result is None or isinstance(result, str)
