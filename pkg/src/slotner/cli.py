"""Command-line entry point: ``slotner <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import plotting
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ABLATIONS, ConfigError, build_configs, dump_config, load_config
from .data import (Corpus, CorpusFormatError, SynthSpec, corpus_stats, dump_corpus, load_corpus, save_corpus,
                   synth_generate)
from .matching import UNTYPED, Entity, TooManyEntities
from .template import SequenceTooLong
from .training import (SWEEP_AXES, EvalReport, NonFiniteLoss, build_vocab, entities_to_record, evaluate,
                       fit, init_model, make_instances, metrics_line, predict_sentences, run_sweep, score)

log = logging.getLogger("slotner")

EXPECTED_ERRORS = (CorpusFormatError, ConfigError, CheckpointError, TooManyEntities, SequenceTooLong,
                   NonFiniteLoss, FileNotFoundError, ValueError)


def _values(args) -> dict:
    values = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        values["mode"] = args.mode
    return values


def _report_tsv(report: EvalReport) -> str:
    lines = ["metric\tvalue"] + [f"{k}\t{v:.6f}" for k, v in report.rows()]
    lines += [f"{k}\t{v}" for k, v in report.counts.items()]
    return "\n".join(lines) + "\n"


def _write_report(report: EvalReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / "report.tsv").write_text(_report_tsv(report))
    plotting.plot_report(report, out / "report.png")


def cmd_train(args) -> int:
    train = load_corpus(args.data)
    values = _values(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mcfg, tcfg = build_configs(values, 0, len(train.types), args.ablation)
    vocab = build_vocab(train, mcfg)
    mcfg, tcfg = build_configs(values, len(vocab), len(train.types), args.ablation)
    model = init_model(mcfg, tcfg.seed)
    instances = make_instances(train, vocab, mcfg)
    with open(out / "metrics.jsonl", "w") as fh:
        def on_step(rec):
            fh.write(metrics_line(rec) + "\n")

        def on_epoch(epoch, _model):
            log.info("epoch %d done", epoch + 1)
        history = fit(model, instances, tcfg, on_step=on_step, on_epoch=on_epoch)
    (out / "config.toml").write_text(dump_config({**values, **ABLATIONS[args.ablation]}))
    save_checkpoint(out / "checkpoint.bin", model, vocab, train.types,
                    {"train": {k: v for k, v in vars(tcfg).items() if k != "betas"}, "ablation": args.ablation})
    if history:
        plotting.plot_training_curve(history, out / "loss.png")
    if args.test:
        report = evaluate(model, vocab, load_corpus(args.test))
        _write_report(report, out)
        sys.stdout.write(_report_tsv(report))
    return 0


def cmd_eval(args) -> int:
    gold = load_corpus(args.data)
    if args.predictions:
        pred = load_corpus(args.predictions)
        if len(pred) != len(gold):
            raise ValueError(f"{len(pred)} predicted sentences vs {len(gold)} gold")
        report = score([gold.gold(r) for r in gold], [_retype(gold.types, r) for r in pred], gold.types)
    elif args.model:
        model, vocab, types, _ = load_checkpoint(args.model)
        if list(types) != list(gold.types):
            raise ValueError(f"corpus types {gold.types} differ from the checkpoint's {types}")
        report = evaluate(model, vocab, gold)
    else:
        raise ValueError("eval needs --model or --predictions")
    if args.out:
        _write_report(report, Path(args.out))
    sys.stdout.write(_report_tsv(report))
    return 0


def _retype(types: list[str], record) -> list[Entity]:
    """Prediction entities with type ids taken from the gold inventory."""
    out = []
    for e in record.entities:
        if e.type is not None and e.type not in types:
            raise ValueError(f"predicted type {e.type!r} not in gold inventory {types}")
        out.append(Entity(e.start, e.end, UNTYPED if e.type is None else types.index(e.type)))
    return sorted(out)


def cmd_predict(args) -> int:
    model, vocab, types, _ = load_checkpoint(args.model)
    src = open(args.data, encoding="utf-8") if args.data and args.data != "-" else sys.stdin
    with src:
        sentences = [line.split() for line in src if line.strip()]
    preds = predict_sentences(model, vocab, sentences)
    corpus = Corpus(list(types), [entities_to_record(s, p, types, str(i)) for i, (s, p) in enumerate(zip(sentences, preds))])
    text = dump_corpus(corpus)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(num_types=args.types, vocab_size=args.vocab_size, min_len=args.min_len, max_len=args.max_len,
                     density=args.density, nesting=args.nesting, max_entities=args.max_entities,
                     seed=args.seed if args.seed is not None else 0, size=args.size)
    corpus = synth_generate(spec)
    if args.out:
        save_corpus(corpus, args.out)
    else:
        sys.stdout.write(dump_corpus(corpus))
    return 0


def cmd_stats(args) -> int:
    stats = corpus_stats(load_corpus(args.data))
    rows = ["field\tvalue"]
    for k, v in stats.rows():
        rows.append(f"{k}\t{v:.4f}" if isinstance(v, float) else f"{k}\t{v}")
    sys.stdout.write("\n".join(rows) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import model_suite, op_suite
    tol = {"64": 1e-5, "32": 1e-3}
    rows = ["case\tmax_rel_error\ttolerance\tstatus"]
    for name, err in op_suite(args.seed or 0).items():
        rows.append(f"op/{name}\t{err:.3e}\t1e-04\t{'pass' if err < 1e-4 else 'FAIL'}")
    for name, err in model_suite(range(args.seeds)).items():
        t = tol[name.split("/")[1]]
        rows.append(f"model/{name}\t{err:.3e}\t{t:.0e}\t{'pass' if err < t else 'FAIL'}")
    text = "\n".join(rows) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.tsv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    train, test = load_corpus(args.data), load_corpus(args.test)
    values = _values(args)
    mcfg, tcfg = build_configs(values, 0, len(train.types), args.ablation)
    grid = [int(v) for v in args.values.split(",") if v.strip()]
    results = run_sweep(args.axis, grid, train, test, mcfg, tcfg)
    lines = [f"{args.axis}\tf1\tloc_f1\ttyping_accuracy"]
    lines += [f"{v}\t{r.f1:.6f}\t{r.loc_f1:.6f}\t{r.typing_accuracy:.6f}" for v, r in results]
    text = "\n".join(lines) + "\n"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_{args.axis}.tsv").write_text(text)
    plotting.plot_sweep(args.axis, results, out / f"sweep_{args.axis}.png")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slotner", description="Multi-prompt slot-filling NER.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_help, out_help, out_required=False):
        p.add_argument("--data", required=True, help=data_help)
        p.add_argument("--out", required=out_required, help=out_help)

    def training_flags(p):
        p.add_argument("--config", help="flat TOML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=["full", "locate_only"])
        p.add_argument("--ablation", choices=list(ABLATIONS), default="none")

    p = sub.add_parser("train", help="train a model on a corpus")
    common(p, "training corpus (JSONL)", "output directory", out_required=True)
    p.add_argument("--test", help="evaluate on this corpus after training")
    training_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a prediction file against gold")
    common(p, "gold corpus (JSONL)", "directory for report.json/.tsv/.png")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--predictions", help="predicted corpus (JSONL) to score instead of a model")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="tag whitespace-tokenized sentences, one per line")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", help="sentence file; stdin when omitted or '-'")
    p.add_argument("--out", help="write the corpus serialization here instead of stdout")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", help="output file; stdout when omitted")
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--types", type=int, default=3)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--min-len", type=int, default=8)
    p.add_argument("--max-len", type=int, default=24)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--nesting", type=float, default=0.3)
    p.add_argument("--max-entities", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("gradcheck", help="run the op and full-model gradient suites")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, help="seed for the op suite")
    p.add_argument("--out", help="directory for gradcheck.tsv")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train and evaluate across values of M or I")
    common(p, "training corpus (JSONL)", "output directory", out_required=True)
    p.add_argument("--test", required=True, help="evaluation corpus")
    p.add_argument("--axis", choices=list(SWEEP_AXES), required=True)
    p.add_argument("--values", required=True, help="comma-separated, e.g. 4,8,12")
    training_flags(p)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except EXPECTED_ERRORS as exc:
        print(f"slotner {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
