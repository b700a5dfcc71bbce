"""Command line entry point: ``svlr <command> [flags]``.

Exit status is 0 on success, 1 when inputs violate a contract (bad files,
unknown words, failed gradient checks) and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from . import config, evalkit
from .autodiff import DegenerateBatchError, NonFiniteError, ShapeError
from .model import CheckpointError, MissingCategoryError, MissingWordError, load_checkpoint
from .recognition import ContractError, OntologyError
from .synthworld import ParseError, SpecError, WorldSpec, generate, read_corpus, write_corpus
from .trainer import RunConfig, TrainingAborted, run_arm

CONTRACT_ERRORS = (config.ConfigError, ParseError, SpecError, CheckpointError, MissingWordError,
                   MissingCategoryError, ContractError, OntologyError, ShapeError, NonFiniteError,
                   DegenerateBatchError, TrainingAborted, evalkit.UndefinedCorrelationError,
                   FileNotFoundError, NotADirectoryError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def _load_for_corpus(path, corpus):
    model, meta = load_checkpoint(path)
    if model.vocab.words != corpus.vocab.words:
        raise CheckpointError(f"{path}: checkpoint vocabulary does not match the corpus")
    return model, meta


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    spec = config.load(args.spec, WorldSpec()) if args.spec else WorldSpec()
    corpus = generate(spec)
    write_corpus(corpus, args.out)
    print(f"wrote corpus to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = config.load(args.config, RunConfig()) if args.config else RunConfig()
    cfg.alphas()   # validates arm and direction before any work
    corpus = read_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.dump(cfg))
    arts = run_arm(cfg, corpus, out)
    last = arts.metrics[-1]
    print(f"{cfg.arm}: step {last['step']} vqa_val_acc {last['vqa_val_acc']:.4f} "
          f"obj_top1 {last['obj_top1']:.4f} atr_acc {last['atr_acc']:.4f}")
    return 0


def cmd_eval(args) -> int:
    corpus = read_corpus(args.corpus)
    model, meta = _load_for_corpus(args.checkpoint, corpus)
    zero_shot = args.zero_shot or meta.get("arm") == "zero_shot"
    report = Path(args.report)
    report.mkdir(parents=True, exist_ok=True)
    acc = evalkit.vqa_accuracy(model, corpus, args.split, zero_shot=zero_shot)
    rec = evalkit.recognition_report(model, corpus, args.split)
    rows = [("metric", "value")]
    rows += [(f"vqa_acc_{k}", v) for k, v in acc.items()]
    rows += [("obj_top1", rec.obj_top1), ("obj_top1_raw", rec.obj_top1_raw),
             ("obj_top1_closed", rec.obj_top1_closed), ("atr_acc", rec.atr_acc),
             ("chance", 1.0 / corpus.spec.options_per_question)]
    (report / "accuracy.csv").write_text(_rows_csv(rows))
    sweep = evalkit.attention_sweep(model, corpus, args.split)
    (report / "attention_sweep.csv").write_text(evalkit.sweep_to_csv(sweep))
    if args.baseline:
        base, _ = _load_for_corpus(args.baseline, corpus)
        grid = evalkit.transfer_grid(base, model, corpus, split=args.grid_split)
        (report / "transfer_grid.csv").write_text(grid.to_csv())
        per = [("class", "baseline_acc", "delta")] + [(c, b, d) for c, (b, d) in sorted(grid.per_class.items())]
        (report / "transfer_per_class.csv").write_text(_rows_csv(per))
    print(f"vqa_acc {acc.get('overall', float('nan')):.4f} obj_top1 {rec.obj_top1:.4f} "
          f"atr_acc {rec.atr_acc:.4f} -> {report}")
    return 0


def cmd_zeroshot(args) -> int:
    corpus = read_corpus(args.corpus)
    model, _ = _load_for_corpus(args.checkpoint, corpus)
    acc = evalkit.vqa_accuracy(model, corpus, args.split, zero_shot=True)
    chance = 1.0 / corpus.spec.options_per_question
    rows = [("metric", "value")] + [(f"vqa_acc_{k}", v) for k, v in acc.items()] + [("chance", chance)]
    if args.report:
        report = Path(args.report)
        report.mkdir(parents=True, exist_ok=True)
        (report / "zeroshot.csv").write_text(_rows_csv(rows))
    print(f"zero-shot accuracy {acc.get('overall', float('nan')):.4f} (chance {chance:.4f})")
    return 0


def cmd_probe(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    words = [w.strip() for w in args.words.split(",") if w.strip()]
    if not words:
        raise UsageError("probe: --words needs at least one word")
    if args.k < 1:
        raise UsageError("probe: --k must be positive")
    text = evalkit.probe_to_csv(evalkit.nn_probe(model, words, args.k))
    if args.report:
        report = Path(args.report)
        report.mkdir(parents=True, exist_ok=True)
        (report / "probe.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.seed)
    bad = 0
    for r in results:
        bad += not r.ok
        print(f"{'ok ' if r.ok else 'FAIL'} {r.name:28s} err {r.max_err:.3e} entries {r.n_checked} nudges {r.nudges}")
    print(f"{len(results) - bad}/{len(results)} checks passed (seed {args.seed})")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="svlr", description="Shared vision-language representation toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--spec", help="key=value world spec file (defaults when omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train one arm")
    s.add_argument("--config", help="key=value run config file (defaults when omitted)")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="accuracy, attention sweep and (with --baseline) transfer grid")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--baseline", help="genome-only checkpoint for the transfer grid")
    s.add_argument("--split", default="val", choices=("train", "val", "test"))
    s.add_argument("--grid-split", default="test", choices=("train", "val", "test"))
    s.add_argument("--zero-shot", action="store_true", help="score with the zero-shot rule")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("zeroshot", help="zero-shot VQA accuracy of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--split", default="val", choices=("train", "val", "test"))
    s.add_argument("--report")
    s.set_defaults(fn=cmd_zeroshot)

    s = sub.add_parser("probe", help="nearest-neighbour word probe")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--words", required=True, help="comma separated query words")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--report")
    s.set_defaults(fn=cmd_probe)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=1)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:   # --help
        return int(e.code or 0)
    except CONTRACT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
