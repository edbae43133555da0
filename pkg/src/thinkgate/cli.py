"""Command-line surface: generate / score / evaluate / sweep / report / serve / fixture.

Every run is driven by a JSON config document mirroring
:class:`thinkgate.harness.RunConfig`; any field can be overridden by a
flag. Secrets never live in configs: API keys are read from the
environment variable named by ``api_key_env``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .answers import load_dataset
from .backend import request_key
from .fixtures import build_from_script, validate_fixture
from .gateway import GatewayService, serve_gateway
from .harness import (
    CachingBackend,
    GenerationCache,
    RunConfig,
    SCORES_FILENAME,
    build_backend,
    load_probe_inputs,
    load_scores,
    phase_evaluate,
    phase_generate,
    phase_score,
    write_reports,
)
from .plotting import render_figures
from .prompting import PromptKind, render_prompt
from .scorers import ScorerKind

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file (RunConfig fields)")
    parser.add_argument("--dataset", type=Path, help="dataset JSONL path")
    parser.add_argument("--cache-dir", type=Path, help="generation cache directory")
    parser.add_argument("--out", type=Path, help="report output directory")
    parser.add_argument("--scorers", help="comma-separated scorer names to enable")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--fixture", type=Path, help="mock-backend fixture file")
    parser.add_argument("--backend", choices=["mock", "http"], help="backend kind")
    parser.add_argument("--alpha", type=float, help="entropy ceiling multiplier")
    parser.add_argument("--lambdas", help="comma-separated threshold grid")


def _load_config(args: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = RunConfig.from_dict(doc)
    if args.dataset:
        config.dataset_path = str(args.dataset)
    if args.cache_dir:
        config.cache_dir = str(args.cache_dir)
    if args.out:
        config.out_dir = str(args.out)
    if args.scorers:
        config.scorers = tuple(ScorerKind(s.strip()) for s in args.scorers.split(","))
    if args.seed is not None:
        config.seed = args.seed
    if args.fixture:
        config.fixture_path = str(args.fixture)
        if not args.backend:
            config.backend = "mock"
    if args.backend:
        config.backend = args.backend
    if args.alpha is not None:
        config.alpha = args.alpha
    if args.lambdas:
        config.lambda_grid = tuple(float(v) for v in args.lambdas.split(","))
    if not config.dataset_path:
        raise SystemExit("a dataset is required (--dataset or config dataset_path)")
    return config


def _prepared(config: RunConfig):
    questions = load_dataset(config.dataset_path)
    cache = GenerationCache(config.cache_dir)
    caching = CachingBackend(build_backend(config), cache)
    return questions, cache, caching


def cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    questions, _, caching = _prepared(config)
    report = phase_generate(config, questions, caching)
    hits, misses = caching.stats
    print(
        f"generate: {report.new_records} new, {report.cache_hits} cached,"
        f" {report.errors} errors ({misses} backend calls)"
    )
    return 1 if report.errors else 0


def cmd_score(args: argparse.Namespace) -> int:
    config = _load_config(args)
    questions, _, caching = _prepared(config)
    out_path = Path(config.cache_dir) / SCORES_FILENAME
    scores = phase_score(config, questions, caching, out_path)
    n_rows = sum(len(v) for v in scores.values())
    n_missing = len(questions) * len(config.scorers) - n_rows
    print(f"score: {n_rows} rows ({n_missing} missing) -> {out_path}")
    return 0


def _evaluate(config: RunConfig):
    questions, cache, caching = _prepared(config)
    scores_path = Path(config.cache_dir) / SCORES_FILENAME
    if scores_path.exists():
        scores = load_scores(scores_path)
    else:
        scores = phase_score(config, questions, caching, scores_path)
    return phase_evaluate(config, questions, cache, scores)


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    evals = _evaluate(config)
    written = write_reports(config, evals)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args)
    kind = ScorerKind(args.scorer)
    evals = _evaluate(config)
    from .harness import sweep_csv_lines

    for ev in evals:
        if kind not in ev.sweeps:
            print(f"{ev.dataset}: no {kind.value} scores", file=sys.stderr)
            continue
        print(f"# {ev.dataset}")
        for line in sweep_csv_lines(ev.sweeps[kind]):
            print(line)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    config = _load_config(args)
    evals = _evaluate(config)
    written = write_reports(config, evals)
    written += render_figures(config, evals)
    for path in written:
        print(f"wrote {path}")
    for ev in evals:
        think = ev.thinking
        print(f"\n{ev.dataset} (n={ev.n_instances}, errored={ev.errored_instances})")
        print(f"  {'method':<12} {'acc':>7} {'tok':>10} {'nr':>7}")
        print(f"  {'thinking':<12} {think.accuracy:>7.3f} {think.mean_tokens:>10.1f} {0.0:>7.1%}")
        nothink = ev.nothinking
        print(
            f"  {'nothinking':<12} {nothink.accuracy:>7.3f} {nothink.mean_tokens:>10.1f}"
            f" {1.0:>7.1%}"
        )
        for kind, point in sorted(ev.best.items(), key=lambda kv: kv[0].value):
            print(
                f"  {kind.value:<12} {point.accuracy:>7.3f} {point.mean_tokens:>10.1f}"
                f" {point.nothinking_ratio:>7.1%}  (lambda={point.lam:g})"
            )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    config = _load_config(args)
    hidden, weights = load_probe_inputs(config)
    service = GatewayService(
        backend=build_backend(config),
        scorer=ScorerKind(args.scorer),
        lam=args.threshold,
        alpha=config.alpha,
        markers=config.markers,
        fake=config.fake,
        params=config.sampling,
        seed=config.seed,
        dynasor_samples=config.dynasor_samples,
        hidden_states=hidden,
        probe_weights=weights,
    )
    server = serve_gateway(service, host=args.host, port=args.port)
    print(f"gateway listening on {args.host}:{args.port} (scorer={args.scorer}, lambda={args.threshold})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_fixture(args: argparse.Namespace) -> int:
    if args.fixture_cmd == "build":
        config = _load_config(args)
        questions = load_dataset(config.dataset_path)
        script = json.loads(Path(args.script).read_text(encoding="utf-8"))
        builder = build_from_script(
            script,
            questions,
            params=config.sampling,
            markers=config.markers,
            fake=config.fake,
            seed=config.seed,
        )
        builder.write(args.out_file)
        print(f"wrote {len(builder.entries)} fixture entries -> {args.out_file}")
        return 0
    if args.fixture_cmd == "keys":
        config = _load_config(args)
        questions = load_dataset(config.dataset_path)
        for q in questions:
            for kind in (PromptKind.THINKING, PromptKind.NOTHINKING):
                prompt = render_prompt(kind, q.text, config.markers, config.fake)
                print(f"{q.id}\t{kind.value}\t{request_key(prompt, config.sampling, 0)}")
        return 0
    if args.fixture_cmd == "validate":
        count = validate_fixture(args.fixture_file)
        print(f"{args.fixture_file}: {count} entries OK")
        return 0
    raise SystemExit(f"unknown fixture subcommand {args.fixture_cmd!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thinkgate",
        description="Route questions between long- and short-reasoning modes"
        " with confidence monitors; sweep thresholds and report trade-offs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, extra in (
        ("generate", cmd_generate, None),
        ("score", cmd_score, None),
        ("evaluate", cmd_evaluate, None),
        ("report", cmd_report, None),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("sweep", help="print one scorer's threshold sweep as CSV")
    _add_common(p)
    p.add_argument("--scorer", required=True, help="scorer to sweep")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("serve", help="run the routing gateway")
    _add_common(p)
    p.add_argument("--scorer", required=True)
    p.add_argument("--threshold", type=float, required=True, help="exit threshold lambda")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("fixture", help="mock-fixture tooling")
    fixture_sub = p.add_subparsers(dest="fixture_cmd", required=True)
    pb = fixture_sub.add_parser("build", help="build a fixture from a script file")
    _add_common(pb)
    pb.add_argument("--script", type=Path, required=True)
    pb.add_argument("--out-file", type=Path, required=True)
    pb.set_defaults(fn=cmd_fixture)
    pk = fixture_sub.add_parser("keys", help="print the primary request keys for a dataset")
    _add_common(pk)
    pk.set_defaults(fn=cmd_fixture)
    pv = fixture_sub.add_parser("validate", help="load-check a fixture file")
    pv.add_argument("fixture_file", type=Path)
    pv.set_defaults(fn=cmd_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
