"""Command-line entry points: train, eval, perturb, gradcheck, dump-embeddings."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import load_dataset, save_dataset
from .encoder import load_checkpoint, save_checkpoint
from .metrics import average_precision, precision_at_k, reciprocal_rank
from .perturb import PERTURBATION_TYPES, ContractionLexicon, PerturbationSpec, generate_suite
from .trainer import (
    TrainConfig,
    dump_embeddings,
    evaluate,
    grad_check,
    rank_dataset,
    train,
    write_epochs,
    write_history,
)

logger = logging.getLogger(__name__)


def _add_data_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="dataset file (jsonl or tsv)")
    parser.add_argument("--format", default="jsonl", choices=("jsonl", "tsv"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contrank",
        description="Train and evaluate a small contrastive ranking model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + histories")
    p.add_argument("--config", required=True, help="json training config")
    p.add_argument("--train", dest="train_path", required=True)
    p.add_argument("--valid", dest="valid_path", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", default="jsonl", choices=("jsonl", "tsv"))

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    p.add_argument("--report", help="write the json report here instead of stdout only")
    p.add_argument("--per-query", help="optional per-query tsv")
    p.add_argument("--ks", default="1", help="comma-separated precision cutoffs")

    p = sub.add_parser("perturb", help="write one perturbed dataset copy per type")
    _add_data_args(p)
    p.add_argument(
        "--types",
        default=",".join(PERTURBATION_TYPES),
        help="comma-separated subset of: " + ", ".join(PERTURBATION_TYPES),
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lexicon", help="tsv contraction/expansion file")

    p = sub.add_parser("gradcheck", help="compare analytic gradients to finite differences")
    p.add_argument("--config", required=True)
    _add_data_args(p)
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)

    p = sub.add_parser("dump-embeddings", help="write pair embeddings as tsv")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    p.add_argument("--out", required=True)

    return parser


def _cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig.from_json(args.config)
    train_data = load_dataset(args.train_path, format=args.format, split="train")
    valid_data = load_dataset(args.valid_path, format=args.format, split="validation")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config, train_data, valid_data)
    save_checkpoint(result.checkpoint, out / "checkpoint.json")
    write_history(result.history, out / "history.csv")
    write_epochs(result.epochs, out / "epochs.csv")
    print(f"best validation MAP {result.best_map:.4f} at epoch {result.best_epoch}")
    print(f"wrote {out / 'checkpoint.json'}, {out / 'history.csv'}, {out / 'epochs.csv'}")
    return 0


def _parse_ks(raw: str) -> list[int]:
    try:
        ks = [int(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise ValueError(f"invalid --ks value {raw!r}") from exc
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"invalid --ks value {raw!r}")
    return ks


def _cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, format=args.format, split="test")
    ks = _parse_ks(args.ks)
    report = evaluate(checkpoint, dataset, ks)
    payload = json.dumps(report.as_dict(), indent=2)
    print(payload)
    if args.report:
        Path(args.report).write_text(payload + "\n", encoding="utf-8")
    if args.per_query:
        ranked = rank_dataset(
            checkpoint.params, checkpoint.vocab, checkpoint.config.max_len, dataset
        )
        with open(args.per_query, "w", encoding="utf-8") as f:
            f.write("query_id\tnum_candidates\tnum_relevant\tap\trr\tp_at_1\n")
            for r in ranked:
                labels = r.labels
                relevant = sum(labels)
                if relevant:
                    cells = [
                        repr(average_precision(labels)),
                        repr(reciprocal_rank(labels)),
                        repr(precision_at_k(labels, 1)),
                    ]
                else:
                    cells = ["", "", ""]
                f.write("\t".join([r.query_id, str(len(labels)), str(relevant), *cells]) + "\n")
    return 0


def _perturb_output_path(data_path: str, ptype: str) -> Path:
    path = Path(data_path)
    stem = path.name
    for suffix in (".jsonl", ".tsv"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    return path.with_name(f"{stem}.{ptype}.jsonl")


def _cmd_perturb(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data, format=args.format, split="test")
    types = [t.strip() for t in args.types.split(",") if t.strip()]
    lexicon = ContractionLexicon.from_file(args.lexicon) if args.lexicon else None
    specs = [PerturbationSpec(type=t, seed=args.seed) for t in types]
    suite = generate_suite(dataset, specs, lexicon)
    for ptype in types:
        out = _perturb_output_path(args.data, ptype)
        save_dataset(suite.datasets[ptype], out, format="jsonl")
        print(f"{ptype}: wrote {out} ({suite.skipped[ptype]} queries unchanged)")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    config = TrainConfig.from_json(args.config)
    dataset = load_dataset(args.data, format=args.format, split="train")
    max_rel = grad_check(config, dataset, num_probes=args.probes, epsilon=args.epsilon)
    print(f"max relative error {max_rel:.3e} over {args.probes} probes")
    if max_rel > args.tolerance:
        print(f"exceeds tolerance {args.tolerance:.1e}", file=sys.stderr)
        return 1
    return 0


def _cmd_dump_embeddings(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, format=args.format, split="test")
    n = dump_embeddings(checkpoint, dataset, args.out)
    print(f"wrote {n} rows to {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "perturb": _cmd_perturb,
    "gradcheck": _cmd_gradcheck,
    "dump-embeddings": _cmd_dump_embeddings,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
