"""Sidecar CLI: extract / train-probe / dump-fixture."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from thinkgate.scorers import HiddenStateStore, ScorerKind

from .dump import DEFAULT_SCORERS, DumpJob, export_logprob_dump
from .extract import ExtractionJob, extract_hidden_states
from .model import load_model, tiny_char_model
from .train import ProbeTrainConfig, export_weights, load_labels, train_probe

logger = logging.getLogger(__name__)


def _handle(args):
    if args.model == "tiny-char":
        # Offline synthetic model; the alphabet must cover the rendered prompts.
        corpus = Path(args.dataset).read_text(encoding="utf-8")
        from thinkgate.prompting import PromptKind, render_prompt

        alphabet = corpus + "".join(
            render_prompt(kind, "{Question}") for kind in PromptKind
        )
        return tiny_char_model(alphabet, hidden_dim=args.tiny_dim, seed=args.seed,
                               device=args.device)
    return load_model(args.model, device=args.device)


def cmd_extract(args) -> int:
    job = ExtractionJob(
        dataset_path=str(args.dataset),
        out_path=str(args.out),
        device=args.device,
        batch_size=args.batch_size,
    )
    path = extract_hidden_states(job, _handle(args))
    print(f"wrote {path}")
    return 0


def cmd_train_probe(args) -> int:
    store = HiddenStateStore.from_file(args.features)
    labels = load_labels(args.labels)
    config = ProbeTrainConfig(
        hidden_width=args.width,
        learning_rate=args.lr,
        epochs=args.epochs,
        val_fraction=args.val_fraction,
        seed=args.seed,
        grid_search=args.grid,
    )
    result = train_probe(store, labels, config)
    export_weights(result.net, args.out)
    print(
        f"wrote {args.out} (width={result.width}, lr={result.learning_rate:g},"
        f" val_acc={result.val_accuracy:.3f})"
    )
    return 0


def cmd_dump_fixture(args) -> int:
    scorers = (
        tuple(ScorerKind(s.strip()) for s in args.scorers.split(","))
        if args.scorers
        else DEFAULT_SCORERS
    )
    if args.modes_only:
        scorers = ()
    job = DumpJob(
        dataset_path=str(args.dataset),
        out_path=str(args.out),
        device=args.device,
        seed=args.seed,
        scorers=scorers,
        generation_cap=args.generation_cap,
    )
    path = export_logprob_dump(job, _handle(args))
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thinkgate-sidecar",
        description="Hidden-state extraction, probe training, and mock-fixture"
        " dumps from a locally loaded transformer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(p):
        p.add_argument("--model", required=True,
                       help="HF model name/path, or 'tiny-char' for the offline synthetic model")
        p.add_argument("--dataset", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--device", default="cpu")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tiny-dim", type=int, default=8)

    p = sub.add_parser("extract", help="write hidden states at the end-of-thinking position")
    add_model_flags(p)
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("train-probe", help="train the correctness probe and export weights")
    p.add_argument("--features", type=Path, required=True, help="hidden-state file")
    p.add_argument("--labels", type=Path, required=True,
                   help='JSONL of {"id", "nothinking_correct"}')
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", action="store_true", help="grid-search width x learning rate")
    p.set_defaults(fn=cmd_train_probe)

    p = sub.add_parser("dump-fixture", help="generate a mock-backend fixture with the model")
    add_model_flags(p)
    p.add_argument("--scorers", help="comma-separated scorers to cover (default: all prompt monitors)")
    p.add_argument("--modes-only", action="store_true", help="dump only the two generation modes")
    p.add_argument("--generation-cap", type=int, default=24)
    p.set_defaults(fn=cmd_dump_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
