"""Pipeline orchestration: generate both modes, score, evaluate, report.

Phase 1 caches one long-mode and one short-mode completion per question
(plus agreement-probe draws when that scorer is enabled). Phase 2 computes
one score per (question, scorer), reading every completion through the
same content-addressed cache so re-runs make no new backend calls. Phase 3
folds the paired outcomes and scores into threshold sweeps, best-threshold
summaries, baselines, and calibration reports.

All outputs are written atomically and contain no wall-clock data, so a
fixed (dataset, config, fixture) triple reproduces every report byte.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .answers import GradedAnswer, QuestionRecord, grade_text, load_dataset
from .backend import (
    BackendError,
    Completion,
    CompletionBackend,
    FINISH_ERROR,
    HttpBackend,
    MockBackend,
    SamplingParams,
    TokenInfo,
    request_key,
)
from .earlyexit import ChunkBoundary
from .metrics import (
    CalibrationReport,
    DEFAULT_LAMBDA_GRID,
    PairedInstance,
    BranchOutcome,
    SweepPoint,
    UndefinedMetricError,
    best_point,
    calibration_report,
    nothinking_baseline,
    random_baseline_curve,
    roc_auc,
    sweep_thresholds,
    thinking_baseline,
)
from .prompting import (
    DEFAULT_FAKE,
    DEFAULT_MARKERS,
    ChatMarkers,
    FakeThought,
    PromptKind,
    render_prompt,
)
from .scorers import (
    BINARY_SCORERS,
    HiddenStateStore,
    LOWER_EXITS,
    MissingFeatureError,
    MlpWeights,
    ScoreValue,
    ScorerKind,
    compute_score,
    load_mlp_weights,
    orientation_for,
)

logger = logging.getLogger(__name__)

MODE_THINKING = "thinking"
MODE_NOTHINKING = "nothinking"
MODE_DYNASOR_PROBE = "dynasor_probe"

#: The method scorers enabled by default (the random selector is an
#: evaluation-time baseline, not a per-question score row).
DEFAULT_SCORERS = (
    ScorerKind.FLASHTHINK,
    ScorerKind.PROMPTCONF,
    ScorerKind.DYNASOR,
    ScorerKind.PREJUDGE,
    ScorerKind.PROBECONF,
    ScorerKind.DEER,
    ScorerKind.ENTROPY,
)


@dataclass
class RunConfig:
    """Everything one pipeline run needs; mirrors the JSON config file."""

    dataset_path: str = ""
    cache_dir: str = "cache"
    out_dir: str = "out"
    backend: str = "mock"  # "mock" | "http"
    fixture_path: str | None = None
    reasoner_url: str = ""
    verifier_url: str = ""
    reasoner_model: str | None = None
    verifier_model: str | None = None
    api_key_env: str = ""
    parallelism: int = 8
    sampling: SamplingParams = field(default_factory=SamplingParams)
    scorers: tuple[ScorerKind, ...] = DEFAULT_SCORERS
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    alpha: float = 1.0
    dynasor_samples: int = 3
    ece_bins: int = 10
    seed: int = 0
    markers: ChatMarkers = DEFAULT_MARKERS
    fake_text: str = DEFAULT_FAKE.text
    chunking: ChunkBoundary = field(default_factory=ChunkBoundary)
    hidden_states_path: str | None = None
    probe_weights_path: str | None = None

    def __post_init__(self) -> None:
        self.lambda_grid = tuple(self.lambda_grid)
        self.scorers = tuple(self.scorers)
        if not self.lambda_grid:
            raise ValueError("lambda_grid must be non-empty")
        if any(not 0.0 <= v <= 1.0 for v in self.lambda_grid):
            raise ValueError("lambda_grid values must lie in [0,1]")
        if any(a >= b for a, b in zip(self.lambda_grid, self.lambda_grid[1:])):
            raise ValueError("lambda_grid must be strictly increasing")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0,1]")

    @property
    def fake(self) -> FakeThought:
        return FakeThought(self.fake_text)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        kwargs = dict(doc)
        if "sampling" in kwargs:
            kwargs["sampling"] = SamplingParams(**kwargs["sampling"])
        if "markers" in kwargs:
            value = kwargs["markers"]
            kwargs["markers"] = (
                ChatMarkers.for_model(value) if isinstance(value, str) else ChatMarkers(**value)
            )
        if "chunking" in kwargs:
            kwargs["chunking"] = ChunkBoundary(**kwargs["chunking"])
        if "scorers" in kwargs:
            kwargs["scorers"] = tuple(ScorerKind(s) for s in kwargs["scorers"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(kwargs) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**kwargs)

    def fingerprint(self) -> str:
        """Stable digest of the run-affecting settings, for report metadata."""
        import hashlib

        doc = {
            "dataset_path": self.dataset_path,
            "sampling": self.sampling.canonical(),
            "scorers": [s.value for s in self.scorers],
            "lambda_grid": list(self.lambda_grid),
            "alpha": self.alpha,
            "dynasor_samples": self.dynasor_samples,
            "ece_bins": self.ece_bins,
            "seed": self.seed,
            "fake_text": self.fake_text,
            "markers": dataclasses.asdict(self.markers),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def build_backend(config: RunConfig) -> CompletionBackend:
    if config.backend == "mock":
        if not config.fixture_path:
            raise ValueError("mock backend requires fixture_path")
        return MockBackend.from_file(config.fixture_path)
    if config.backend == "http":
        if not config.reasoner_url:
            raise ValueError("http backend requires reasoner_url")
        return HttpBackend(
            reasoner_url=config.reasoner_url,
            verifier_url=config.verifier_url or None,
            reasoner_model=config.reasoner_model,
            verifier_model=config.verifier_model,
            api_key_env=config.api_key_env or None,
            parallelism=config.parallelism,
        )
    raise ValueError(f"unknown backend kind {config.backend!r}")


# ---------------------------------------------------------------------------
# Generation cache
# ---------------------------------------------------------------------------


def _completion_to_json(completion: Completion) -> dict:
    return {
        "text": completion.text,
        "n_tokens": completion.n_tokens,
        "finish": completion.finish_reason,
        "tokens": [
            {"t": t.token_text, "lp": t.logprob, "top": [list(a) for a in t.top_alternatives]}
            for t in completion.tokens
        ],
    }


def _completion_from_json(doc: Mapping) -> Completion:
    tokens = tuple(
        TokenInfo(t["t"], t["lp"], tuple((a[0], a[1]) for a in t.get("top", [])))
        for t in doc.get("tokens", [])
    )
    return Completion(
        text=doc["text"],
        tokens=tokens,
        n_tokens=doc.get("n_tokens", len(tokens)),
        finish_reason=doc.get("finish", "stop"),
    )


class GenerationCache:
    """Append-only JSON Lines store of completed requests, keyed by content.

    A key collision on re-run is a cache hit, never a rewrite. The writer
    is lock-serialized; loaded state is shared read-only.
    """

    FILENAME = "generations.jsonl"

    def __init__(self, cache_dir: str | Path):
        self.path = Path(cache_dir) / self.FILENAME
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._records.setdefault(record["key"], record)

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> dict | None:
        return self._records.get(key)

    def put(self, record: dict) -> bool:
        """Append a record unless its key is already cached."""
        with self._lock:
            if record["key"] in self._records:
                return False
            self._records[record["key"]] = record
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return True

    def records_for(self, question_id: str, mode: str) -> list[dict]:
        return [
            r
            for r in self._records.values()
            if r["id"] == question_id and r["mode"] == mode
        ]


class CachingBackend:
    """Read-through cache over a completion backend.

    Each served request is annotated with the question and mode it belongs
    to before being persisted, so the cache doubles as the run's generation
    record.
    """

    def __init__(self, inner: CompletionBackend, cache: GenerationCache):
        self.inner = inner
        self.cache = cache
        self._hits = 0
        self._misses = 0

    @property
    def stats(self) -> tuple[int, int]:
        return self._hits, self._misses

    def complete_annotated(
        self,
        prompt: str,
        params: SamplingParams,
        role: str,
        sample_index: int,
        question: QuestionRecord,
        mode: str,
        grade: bool = False,
    ) -> tuple[Completion, GradedAnswer | None]:
        key = request_key(prompt, params, sample_index)
        record = self.cache.get(key)
        if record is not None:
            self._hits += 1
            completion = _completion_from_json(record["completion"])
            graded = record.get("graded")
            return completion, (
                GradedAnswer(graded["extracted"], graded["correct"], graded.get("trace", ""))
                if graded
                else None
            )
        self._misses += 1
        completion = self.inner.complete(prompt, params, role, sample_index)
        graded = grade_text(completion.text, question) if grade else None
        self.cache.put(
            {
                "key": key,
                "id": question.id,
                "mode": mode,
                "sample_index": sample_index,
                "completion": _completion_to_json(completion),
                "graded": (
                    {
                        "extracted": graded.extracted,
                        "correct": graded.correct,
                        "trace": graded.normalization_trace,
                    }
                    if graded
                    else None
                ),
                "created_at": time.time(),
            }
        )
        return completion, graded

    def record_error(
        self,
        prompt: str,
        params: SamplingParams,
        sample_index: int,
        question: QuestionRecord,
        mode: str,
        error: str,
    ) -> None:
        key = request_key(prompt, params, sample_index)
        self.cache.put(
            {
                "key": key,
                "id": question.id,
                "mode": mode,
                "sample_index": sample_index,
                "completion": {"text": "", "n_tokens": 0, "finish": FINISH_ERROR, "tokens": []},
                "graded": None,
                "error": error,
                "created_at": time.time(),
            }
        )


class _QuestionView:
    """Backend facade bound to one question: scorers call plain
    ``complete`` and the underlying cache records the annotation."""

    def __init__(self, caching: CachingBackend, question: QuestionRecord, mode: str):
        self._caching = caching
        self._question = question
        self._mode = mode

    def complete(
        self,
        prompt: str,
        params: SamplingParams,
        role: str = "reasoner",
        sample_index: int = 0,
    ) -> Completion:
        completion, _ = self._caching.complete_annotated(
            prompt, params, role, sample_index, self._question, self._mode
        )
        return completion


# ---------------------------------------------------------------------------
# Phase 1: generation
# ---------------------------------------------------------------------------


@dataclass
class PhaseReport:
    new_records: int = 0
    cache_hits: int = 0
    errors: int = 0
    error_keys: list[str] = field(default_factory=list)


def _generate_one(
    config: RunConfig,
    caching: CachingBackend,
    question: QuestionRecord,
    report: PhaseReport,
    lock: threading.Lock,
) -> None:
    from .scorers import dynasor_sample_index, probe_params

    jobs: list[tuple[str, SamplingParams, int, str, bool]] = [
        (
            render_prompt(PromptKind.THINKING, question.text, config.markers),
            config.sampling,
            0,
            MODE_THINKING,
            True,
        ),
        (
            render_prompt(PromptKind.NOTHINKING, question.text, config.markers, config.fake),
            config.sampling,
            0,
            MODE_NOTHINKING,
            True,
        ),
    ]
    if ScorerKind.DYNASOR in config.scorers:
        probe_prompt = render_prompt(
            PromptKind.DYNASOR_PROBE, question.text, config.markers, config.fake
        )
        p = probe_params(config.sampling)
        for draw in range(config.dynasor_samples):
            jobs.append(
                (
                    probe_prompt,
                    p,
                    dynasor_sample_index(config.seed, question.id, draw),
                    MODE_DYNASOR_PROBE,
                    False,
                )
            )

    for prompt, params, sample_index, mode, grade in jobs:
        was_cached = caching.cache.get(request_key(prompt, params, sample_index)) is not None
        try:
            caching.complete_annotated(
                prompt, params, "reasoner", sample_index, question, mode, grade=grade
            )
            with lock:
                if was_cached:
                    report.cache_hits += 1
                else:
                    report.new_records += 1
        except BackendError as exc:
            logger.warning("generation failed for %s/%s: %s", question.id, mode, exc)
            caching.record_error(prompt, params, sample_index, question, mode, str(exc))
            with lock:
                report.errors += 1
                report.error_keys.append(request_key(prompt, params, sample_index))


def phase_generate(
    config: RunConfig,
    questions: Sequence[QuestionRecord],
    caching: CachingBackend,
) -> PhaseReport:
    """Ensure both modes (and probe draws) are cached for every question."""
    report = PhaseReport()
    lock = threading.Lock()
    with ThreadPoolExecutor(max_workers=max(1, config.parallelism)) as pool:
        futures = [
            pool.submit(_generate_one, config, caching, q, report, lock) for q in questions
        ]
        for future in futures:
            future.result()
    return report


# ---------------------------------------------------------------------------
# Phase 2: scoring
# ---------------------------------------------------------------------------

SCORES_FILENAME = "scores.jsonl"


def load_probe_inputs(
    config: RunConfig,
) -> tuple[HiddenStateStore | None, MlpWeights | None]:
    hidden = (
        HiddenStateStore.from_file(config.hidden_states_path)
        if config.hidden_states_path
        else None
    )
    weights = (
        load_mlp_weights(config.probe_weights_path) if config.probe_weights_path else None
    )
    return hidden, weights


def phase_score(
    config: RunConfig,
    questions: Sequence[QuestionRecord],
    caching: CachingBackend,
    out_path: str | Path | None = None,
) -> dict[str, dict[ScorerKind, ScoreValue]]:
    """One score per (question, enabled scorer); persisted as JSON Lines.

    Missing features (no hidden-state record, backend failure) mark the
    (question, scorer) pair unscored; the pair is excluded from evaluation
    and counted, never imputed.
    """
    hidden, weights = load_probe_inputs(config)
    scores: dict[str, dict[ScorerKind, ScoreValue]] = {}
    rows: list[dict] = []
    for question in questions:
        per_question: dict[ScorerKind, ScoreValue] = {}
        for kind in config.scorers:
            view = _QuestionView(caching, question, f"monitor:{kind.value}")
            try:
                value = compute_score(
                    kind,
                    question,
                    backend=view,
                    markers=config.markers,
                    fake=config.fake,
                    params=config.sampling,
                    seed=config.seed,
                    dynasor_samples=config.dynasor_samples,
                    hidden_states=hidden,
                    probe_weights=weights,
                )
            except MissingFeatureError as exc:
                rows.append(
                    {
                        "id": question.id,
                        "scorer": kind.value,
                        "value": None,
                        "orientation": None,
                        "aux": {"missing_feature": True, "reason": str(exc)},
                    }
                )
                continue
            except BackendError as exc:
                rows.append(
                    {
                        "id": question.id,
                        "scorer": kind.value,
                        "value": None,
                        "orientation": None,
                        "aux": {"missing_feature": True, "reason": f"backend: {exc}"},
                    }
                )
                continue
            per_question[kind] = value
            rows.append(value.to_json(question.id))
        scores[question.id] = per_question

    if out_path is not None:
        rows.sort(key=lambda r: (r["id"], r["scorer"]))
        _atomic_write_lines(out_path, (json.dumps(r, sort_keys=True) for r in rows))
    return scores


def load_scores(path: str | Path) -> dict[str, dict[ScorerKind, ScoreValue]]:
    """Read a phase-2 score store back into memory (missing rows skipped)."""
    scores: dict[str, dict[ScorerKind, ScoreValue]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if row["value"] is None:
                continue
            kind = ScorerKind(row["scorer"])
            scores.setdefault(row["id"], {})[kind] = ScoreValue(
                scorer=kind,
                value=row["value"],
                orientation=row["orientation"],
                aux=row.get("aux", {}),
            )
    return scores


# ---------------------------------------------------------------------------
# Phase 3: evaluation
# ---------------------------------------------------------------------------


@dataclass
class DatasetEval:
    dataset: str
    n_questions: int
    n_instances: int
    errored_instances: int
    thinking: SweepPoint
    nothinking: SweepPoint
    sweeps: dict[ScorerKind, list[SweepPoint]]
    best: dict[ScorerKind, SweepPoint]
    excluded: dict[ScorerKind, int]
    random_curve: list[SweepPoint]
    calibration: dict[ScorerKind, CalibrationReport | str]
    instances: list[PairedInstance]


def build_instances(
    config: RunConfig,
    questions: Sequence[QuestionRecord],
    cache: GenerationCache,
    scores: Mapping[str, Mapping[ScorerKind, ScoreValue]],
) -> tuple[list[PairedInstance], int]:
    """Pair each question's cached branches; errored instances are dropped
    and counted."""
    instances: list[PairedInstance] = []
    errored = 0
    for question in questions:
        branches = {}
        ok = True
        for mode, kind in ((MODE_THINKING, PromptKind.THINKING), (MODE_NOTHINKING, PromptKind.NOTHINKING)):
            prompt = render_prompt(kind, question.text, config.markers, config.fake)
            record = cache.get(request_key(prompt, config.sampling, 0))
            if record is None or record["completion"]["finish"] == FINISH_ERROR:
                ok = False
                break
            graded = record.get("graded") or {}
            branches[mode] = BranchOutcome(
                correct=bool(graded.get("correct", False)),
                tokens=int(record["completion"]["n_tokens"]),
            )
        if not ok:
            errored += 1
            continue
        instances.append(
            PairedInstance(
                question_id=question.id,
                thinking=branches[MODE_THINKING],
                nothinking=branches[MODE_NOTHINKING],
                scores=dict(scores.get(question.id, {})),
            )
        )
    return instances, errored


def evaluate_dataset(
    config: RunConfig,
    dataset: str,
    questions: Sequence[QuestionRecord],
    cache: GenerationCache,
    scores: Mapping[str, Mapping[ScorerKind, ScoreValue]],
) -> DatasetEval:
    instances, errored = build_instances(config, questions, cache, scores)
    if not instances:
        raise ValueError(f"dataset {dataset!r} has no evaluable instances")

    sweeps: dict[ScorerKind, list[SweepPoint]] = {}
    best: dict[ScorerKind, SweepPoint] = {}
    excluded: dict[ScorerKind, int] = {}
    calibration: dict[ScorerKind, CalibrationReport | str] = {}

    for kind in config.scorers:
        scored = [inst for inst in instances if kind in inst.scores]
        excluded[kind] = len(instances) - len(scored)
        if not scored:
            continue
        sweeps[kind] = sweep_thresholds(scored, kind, config.lambda_grid, config.alpha)
        best[kind] = best_point(sweeps[kind])

        if kind in BINARY_SCORERS:
            calibration[kind] = "binary verdict scorer; excluded from calibration"
            continue
        labels = [inst.nothinking.correct for inst in scored]
        if orientation_for(kind) == LOWER_EXITS:
            # Uncertainty scores are not probabilities: report rank quality
            # only, with the sign flipped so higher predicts correct.
            try:
                auc = roc_auc([-inst.scores[kind].value for inst in scored], labels)
                calibration[kind] = CalibrationReport(
                    ece=float("nan"),
                    brier=float("nan"),
                    roc_auc=auc,
                    n_bins=config.ece_bins,
                    positives=sum(labels),
                    negatives=len(labels) - sum(labels),
                )
            except UndefinedMetricError as exc:
                calibration[kind] = f"undefined: {exc}"
            continue
        try:
            calibration[kind] = calibration_report(
                [inst.scores[kind].value for inst in scored], labels, config.ece_bins
            )
        except UndefinedMetricError as exc:
            calibration[kind] = f"undefined: {exc}"

    return DatasetEval(
        dataset=dataset,
        n_questions=len(questions),
        n_instances=len(instances),
        errored_instances=errored,
        thinking=thinking_baseline(instances),
        nothinking=nothinking_baseline(instances),
        sweeps=sweeps,
        best=best,
        excluded=excluded,
        random_curve=random_baseline_curve(instances, config.lambda_grid, config.seed),
        calibration=calibration,
        instances=instances,
    )


def phase_evaluate(
    config: RunConfig,
    questions: Sequence[QuestionRecord],
    cache: GenerationCache,
    scores: Mapping[str, Mapping[ScorerKind, ScoreValue]],
) -> list[DatasetEval]:
    """Evaluate each dataset tag present in the question list."""
    by_dataset: dict[str, list[QuestionRecord]] = {}
    for q in questions:
        by_dataset.setdefault(q.dataset, []).append(q)
    return [
        evaluate_dataset(config, dataset, qs, cache, scores)
        for dataset, qs in sorted(by_dataset.items())
    ]


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return format(value, ".10g")


def _atomic_write_lines(path: str | Path, lines: Iterable[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: str | Path, text: str) -> None:
    _atomic_write_lines(path, text.splitlines())


def sweep_csv_lines(points: Sequence[SweepPoint]) -> list[str]:
    lines = ["lambda,accuracy,mean_tokens,nothinking_ratio,n"]
    for p in points:
        lines.append(
            f"{_fmt(p.lam)},{_fmt(p.accuracy)},{_fmt(p.mean_tokens)},"
            f"{_fmt(p.nothinking_ratio)},{p.n}"
        )
    return lines


def _point_json(p: SweepPoint) -> dict:
    return {
        "acc": p.accuracy,
        "tok": p.mean_tokens,
        "nr": p.nothinking_ratio,
        "n": p.n,
    }


def write_reports(config: RunConfig, evals: Sequence[DatasetEval]) -> list[Path]:
    """Emit sweep CSVs plus the summary and calibration JSON documents."""
    out = Path(config.out_dir)
    written: list[Path] = []

    summary: dict = {
        "metadata": {
            "config_fingerprint": config.fingerprint(),
            "lambda_grid": list(config.lambda_grid),
            "alpha": config.alpha,
            "seed": config.seed,
            "token_counting": "generated tokens only (prompt excluded)",
        },
        "datasets": {},
    }
    calibration_doc: dict = {}

    for ev in evals:
        for kind, points in sorted(ev.sweeps.items(), key=lambda kv: kv[0].value):
            path = out / "sweeps" / f"{ev.dataset}__{kind.value}.csv"
            _atomic_write_lines(path, sweep_csv_lines(points))
            written.append(path)
        path = out / "sweeps" / f"{ev.dataset}__random_baseline.csv"
        _atomic_write_lines(path, sweep_csv_lines(ev.random_curve))
        written.append(path)

        think, nothink = ev.thinking, ev.nothinking
        rows: dict[str, dict] = {}
        for kind, point in sorted(ev.best.items(), key=lambda kv: kv[0].value):
            rows[kind.value] = {
                "best_lambda": point.lam,
                **_point_json(point),
                "delta_acc_vs_thinking": point.accuracy - think.accuracy,
                "delta_tok_pct": (
                    100.0 * (point.mean_tokens - think.mean_tokens) / think.mean_tokens
                    if think.mean_tokens
                    else 0.0
                ),
                "excluded_instances": ev.excluded.get(kind, 0),
            }
        summary["datasets"][ev.dataset] = {
            "n_questions": ev.n_questions,
            "n_instances": ev.n_instances,
            "errored_instances": ev.errored_instances,
            "baselines": {
                "thinking": _point_json(think),
                "nothinking": _point_json(nothink),
            },
            "scorers": rows,
        }

        calibration_doc[ev.dataset] = {
            kind.value: (
                report
                if isinstance(report, str)
                else {
                    "ece": None if report.ece != report.ece else report.ece,
                    "brier": None if report.brier != report.brier else report.brier,
                    "roc_auc": report.roc_auc,
                    "n_bins": report.n_bins,
                    "positives": report.positives,
                    "negatives": report.negatives,
                }
            )
            for kind, report in sorted(ev.calibration.items(), key=lambda kv: kv[0].value)
        }

    summary_path = out / "summary.json"
    _atomic_write_text(summary_path, json.dumps(summary, indent=2, sort_keys=True))
    written.append(summary_path)
    calibration_path = out / "calibration.json"
    _atomic_write_text(calibration_path, json.dumps(calibration_doc, indent=2, sort_keys=True))
    written.append(calibration_path)
    return written


def run_pipeline(config: RunConfig) -> tuple[PhaseReport, list[DatasetEval], list[Path]]:
    """generate -> score -> evaluate -> write reports, end to end."""
    questions = load_dataset(config.dataset_path)
    backend = build_backend(config)
    cache = GenerationCache(config.cache_dir)
    caching = CachingBackend(backend, cache)
    report = phase_generate(config, questions, caching)
    scores = phase_score(
        config, questions, caching, Path(config.cache_dir) / SCORES_FILENAME
    )
    evals = phase_evaluate(config, questions, cache, scores)
    written = write_reports(config, evals)
    return report, evals, written
