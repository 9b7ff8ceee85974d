"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import corpus
from .corpus import CorpusError, Dataset, decode_bio, load_dataset
from .distance import AGGREGATIONS, CASE_MODES, LEVELS, MisalignedCorpora, MissingSlotTags, corpus_similarity
from .metrics import LengthMismatch, MetricReport, SidPrediction, score_sid
from .model import load_model
from .model.checkpoint import CheckpointError, save_model
from .report import (
    ReportFormatError,
    metric_report_markdown,
    metric_report_tsv,
    read_report,
    render_tables,
    report_tsv,
)
from .schedule import ConfigError, MissingBinding, NoTrainableData, ScheduleError, load_config, predict_sid, run_schedule

log = logging.getLogger("sidlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# validate


def validate_dataset(dataset: Dataset) -> dict:
    """Counts, label inventories and BIO problems of a parsed dataset."""
    info = {"sentences": len(dataset), "tokens": sum(len(s) for s in dataset), "labels": {}, "malformed_tags": 0,
            "repaired_spans": 0}
    fields = {"sid": ["slot_tags"], "ud": ["pos_tags", "deprels"], "ner": ["ner_tags"], "mlm": []}[dataset.task_kind]
    for f in fields:
        info["labels"][f] = sorted({t for s in dataset for t in getattr(s, f)})
    if dataset.task_kind == "sid":
        info["labels"]["intent"] = sorted({s.intent for s in dataset})
    bio_field = {"sid": "slot_tags", "ner": "ner_tags"}.get(dataset.task_kind)
    if bio_field:
        for s in dataset:
            tags = getattr(s, bio_field)
            try:
                spans = decode_bio(tags)
            except CorpusError:
                info["malformed_tags"] += sum(1 for t in tags if t != "O" and corpus._TAG_RE.match(t) is None)
                continue
            info["repaired_spans"] += sum(1 for sp in spans if tags[sp.start].startswith("I-"))
    return info


def cmd_validate(args) -> int:
    failed = False
    for path in args.paths:
        fmt = args.format or corpus.guess_format(path)
        try:
            ds = load_dataset(path, fmt)
        except FileNotFoundError:
            print(f"{path}\tERROR\tfile not found")
            failed = True
            continue
        except CorpusError as err:
            print(f"{path}\tERROR\t{type(err).__name__}: {err}")
            failed = True
            continue
        info = validate_dataset(ds)
        print(f"{path}\tformat={fmt}\tsentences={info['sentences']}\ttokens={info['tokens']}"
              f"\tmalformed_tags={info['malformed_tags']}\trepaired_spans={info['repaired_spans']}")
        for field_name, labels in info["labels"].items():
            print(f"  {field_name} ({len(labels)}): {' '.join(labels)}")
        if info["sentences"] == 0:
            print(f"{path}\tWARNING\tno sentences")
        if info["repaired_spans"]:
            print(f"{path}\tWARNING\t{info['repaired_spans']} span(s) start with I- and were repaired")
        if info["malformed_tags"]:
            print(f"{path}\tERROR\t{info['malformed_tags']} malformed BIO tag(s)")
            failed = True
    return EXIT_DATA if failed else EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed:
        config.seeds = list(args.seed)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty; use --force to overwrite")
    report = run_schedule(config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(report_tsv(report), encoding="utf-8")
    loaded = read_report(out / "report.tsv")
    (out / "report.md").write_text(render_tables([loaded], fmt="md"), encoding="utf-8")
    for run in report.runs:
        save_model(run.state, out / f"seed{run.seed}.ckpt", config_echo=report.config)
    print(f"wrote {out / 'report.tsv'}, {out / 'report.md'} and {len(report.runs)} checkpoint(s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _sid_task(state) -> str:
    tasks = sorted({h.task for h in state.heads.values() if h.field == "slot_tags"})
    if not tasks:
        raise UsageError("checkpoint has no SID heads")
    return tasks[0]


def cmd_eval(args) -> int:
    reports: dict[str, MetricReport] = {}
    if args.pred:
        if not args.gold or len(args.gold) != len(args.pred):
            raise UsageError("--pred needs the same number of --gold files")
        for g, p in zip(args.gold, args.pred):
            gold, pred = load_dataset(g, "xsid"), load_dataset(p, "xsid")
            preds = [SidPrediction(s.slot_tags, s.intent) for s in pred]
            reports[gold.name] = score_sid(gold.sentences, preds)
    else:
        if not args.model:
            raise UsageError("eval needs --model (or --gold/--pred)")
        state = load_model(args.model)
        task = args.task or _sid_task(state)
        paths = list(args.datasets) + list(args.gold or [])
        if not paths:
            raise UsageError("no datasets to evaluate")
        for path in paths:
            data = load_dataset(path, "xsid")
            preds = predict_sid(state, task, data)
            reports[data.name] = score_sid(data.sentences, preds)
            if args.write_pred:
                out = Path(args.write_pred)
                out.mkdir(parents=True, exist_ok=True)
                sents = [
                    corpus.Sentence(s.tokens, id=s.id, slot_tags=p.slot_tags, intent=p.intent, meta=dict(s.meta))
                    for s, p in zip(data, preds)
                ]
                text = corpus.format_xsid(Dataset(data.name, "sid", sents))
                (out / f"{data.name}.pred.conll").write_text(text, encoding="utf-8")
    text = metric_report_tsv(reports) if args.format == "tsv" else metric_report_markdown(reports)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# dist


def _parse_corpus_args(items: Sequence[str]) -> dict[str, Path]:
    out = {}
    for item in items:
        if "=" in item:
            tag, _, path = item.partition("=")
        else:
            path = item
            tag = Path(item).name.split(".")[0]
        if tag in out:
            raise UsageError(f"language tag {tag!r} given twice")
        out[tag] = Path(path)
    return out


def cmd_dist(args) -> int:
    paths = _parse_corpus_args(args.corpora)
    if len(paths) < 2:
        raise UsageError("dist needs at least two corpora")
    corpora = {tag: load_dataset(p, "xsid", name=tag, language_tag=tag) for tag, p in paths.items()}
    levels = [args.level] if args.level else list(LEVELS)
    cases = [args.case] if args.case else list(CASE_MODES)
    out = Path(args.out) if args.out else None
    if out is not None:
        if out.exists() and any(out.iterdir()) and not args.force:
            raise UsageError(f"output directory {out} is not empty; use --force to overwrite")
        out.mkdir(parents=True, exist_ok=True)
    for level in levels:
        for case in cases:
            matrix = corpus_similarity(corpora, level, case, args.aggregation)
            text = matrix.to_tsv()
            if out is None:
                sys.stdout.write(text + "\n")
            else:
                (out / f"{level}.{case}.tsv").write_text(text, encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    reports = [read_report(p) for p in args.reports]
    text = render_tables(reports, args.baseline, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sidlab", description="Slot and intent detection transfer experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="parse corpora and report counts and label problems")
    p.add_argument("paths", nargs="+")
    p.add_argument("--format", choices=corpus.FORMATS)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="run a schedule from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--seed", type=int, action="append", help="override the configured seeds (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a prediction file")
    p.add_argument("datasets", nargs="*")
    p.add_argument("--model")
    p.add_argument("--task")
    p.add_argument("--gold", action="append")
    p.add_argument("--pred", action="append")
    p.add_argument("--write-pred")
    p.add_argument("--format", choices=["tsv", "md"], default="md")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dist", help="pairwise similarity of aligned translations")
    p.add_argument("corpora", nargs="+", help="TAG=PATH (tag defaults to the file name up to the first dot)")
    p.add_argument("--level", choices=LEVELS)
    p.add_argument("--case", choices=CASE_MODES)
    p.add_argument("--aggregation", choices=AGGREGATIONS, default="per_sentence")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("report", help="render tables from report.tsv files")
    p.add_argument("reports", nargs="+", help="report.tsv files or training output directories")
    p.add_argument("--baseline")
    p.add_argument("--format", choices=["tsv", "md"], default="md")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ScheduleError, MissingBinding) as err:
        print(f"sidlab: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, MisalignedCorpora, MissingSlotTags, LengthMismatch, NoTrainableData, CheckpointError,
            ReportFormatError, FileNotFoundError, IsADirectoryError) as err:
        print(f"sidlab: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except KeyError as err:
        print(f"sidlab: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001
        log.exception("internal error")
        print(f"sidlab: internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
