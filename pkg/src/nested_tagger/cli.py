"""``nested-tagger`` command line.

Exit status: 0 on success, 1 on bad input (unreadable or malformed files,
bad flags), 2 when an internal check fails or ``--fail-on-violations``
finds unauthorized nested predictions.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from . import __version__
from .align import build_noisy_corpus, read_noisy_texts, write_noisy_texts
from .corpus import (Corpus, CorpusError, NoiseConfig, dumps_jsonl, dumps_tsv, loads_jsonl, loads_tsv, noisy_texts,
                     synth_generate)
from .experiment import run_experiment, text_report, write_report
from .metrics import MetricsError, format_table, full_report, report_csv, report_table
from .schema import FORMATS, IO, IOB2, SchemaError, load_schema
from .tagcodec import FLAT, JOINT, L1, EntryError, decode, encode_entities
from .tagger import FLAT_STRATEGY, STRATEGIES, TrainConfig, TrainingError, dumps_model, load_model, predict_corpus, \
    train

SEED_ENV = "NESTED_TAGGER_SEED"
INPUT_ERRORS = (OSError, CorpusError, SchemaError, EntryError, MetricsError, TrainingError, json.JSONDecodeError,
                UnicodeDecodeError)


class InputError(Exception):
    pass


class ViolationsFound(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- helpers -------------------------------------------------------------------

def _schema(args):
    return load_schema(args.schema) if getattr(args, "schema", None) else load_schema()


def _is_tsv(path: str) -> bool:
    return str(path).endswith((".tsv", ".conll", ".txt"))


def _read(path, schema, fmt=None) -> tuple[Corpus, str]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if _is_tsv(path):
        return loads_tsv(text, schema, source=str(path), fmt=fmt)
    return loads_jsonl(text, schema, source=str(path)), fmt or IOB2


def _write_text(path, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump_corpus(corpus: Corpus, path, fmt: str = IOB2, columns: str = "levels", schema=None) -> str:
    return dumps_tsv(corpus, fmt, columns, schema) if _is_tsv(path) else dumps_jsonl(corpus)


def _config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if getattr(args, "config", None) else TrainConfig()
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            cfg = replace(cfg, seed=int(env))
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return cfg


def _csv_list(value: str, allowed=None, cast=str) -> list:
    items = [cast(v.strip()) for v in value.split(",") if v.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    if allowed is not None:
        bad = [v for v in items if v not in allowed]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown value(s) {bad}; choose from {list(allowed)}")
    return items


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- subcommands ------------------------------------------------------------------

def cmd_convert(args) -> int:
    schema = _schema(args)
    corpus, _ = _read(args.input, schema if args.mode != FLAT else None, args.from_format)
    merged = 0
    if args.to_format == IO:
        for e in corpus:
            merged += len(e.entities) - len(decode(encode_entities(e.entities, len(e.tokens), IO, JOINT)))
    if merged:
        _log(f"convert: IO merged {merged} adjacent same-type entit{'y' if merged == 1 else 'ies'} (lossy)")
    columns = args.mode if args.mode in (JOINT, L1, FLAT) else "levels"
    _write_text(args.out, _dump_corpus(corpus, args.out, args.to_format, columns, schema))
    return 0


def cmd_project(args) -> int:
    schema = _schema(args)
    gold, _ = _read(args.gold, schema)
    texts = read_noisy_texts(args.noisy_text)
    missing = [e.source_id for e in gold if e.source_id not in texts]
    if missing:
        _log(f"project: {len(missing)} entr{'y' if len(missing) == 1 else 'ies'} without OCR text "
             f"(first: {missing[0]})")
    entries, report = build_noisy_corpus(gold.entries, texts, schema)
    noisy = Corpus(entries, schema.fingerprint, "noisy")
    _write_text(args.out, _dump_corpus(noisy, args.out))
    if args.report:
        _write_text(args.report, report.to_json())
    print(report.summary())
    return 0


def cmd_synth(args) -> int:
    schema = _schema(args)
    corpus = synth_generate(args.n, schema, args.seed)
    _write_text(args.out, _dump_corpus(corpus, args.out))
    if args.noisy_text_out:
        cfg = NoiseConfig(rate=args.noise_rate, digit_bias=args.digit_bias, seed=args.seed)
        _write_noisy(args.noisy_text_out, noisy_texts(corpus, cfg))
    print(f"wrote {len(corpus)} entries")
    return 0


def _write_noisy(path, texts) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_noisy_texts(path, texts)


def cmd_train(args) -> int:
    schema = _schema(args)
    cfg = _config(args)
    train_c, _ = _read(args.train, schema)
    dev_c, _ = _read(args.dev, schema)
    model = train(train_c.entries, dev_c.entries, args.strategy, args.format, schema, cfg,
                  log=_log if args.verbose else None)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "wb") as fh:
        fh.write(dumps_model(model))
    best = max(model.history, key=lambda h: h["dev_f1"])
    print(f"trained {model.strategy}-{model.format}: best dev F1 {best['dev_f1']:.4f} at step {best['step']}")
    return 0


def cmd_eval(args) -> int:
    schema = _schema(args)
    model = load_model(args.model, schema)
    if model.strategy == FLAT_STRATEGY:
        raise InputError("eval scores nested models; score the flat baseline through `experiment`")
    corpus, _ = _read(args.corpus, schema)
    pred = predict_corpus(model, corpus.entries)
    report = full_report(corpus.entries, pred, schema, model.format)
    if args.out:
        _write_text(args.out, report_csv(report))
    if args.predictions:
        _write_text(args.predictions, _dump_corpus(Corpus(pred, schema.fingerprint, corpus.provenance),
                                                   args.predictions, model.format))
    print(report_table(report), end="")
    if args.fail_on_violations and report.violations:
        raise ViolationsFound(f"{report.violations} hierarchy violation(s) in predictions")
    return 0


def cmd_experiment(args) -> int:
    schema = _schema(args)
    cfg = _config(args)
    gold, _ = _read(args.corpus, schema)
    noisy = _read(args.noisy_corpus, schema)[0] if args.noisy_corpus else None
    seeds = args.seeds if args.seeds is not None else [cfg.seed]
    rep = run_experiment(gold, noisy, args.strategies, args.formats, seeds, schema, cfg,
                         split_seed=args.split_seed, jobs=args.jobs, keep_models=args.save_models)
    write_report(rep, args.out_dir)
    print(text_report(rep), end="")
    if rep.failures():
        _log(f"experiment: {len(rep.failures())} run(s) failed; see runs.csv")
    if args.fail_on_violations:
        total = sum(r.report.violations for r in rep.runs if r.ok)
        if total:
            raise ViolationsFound(f"{total} hierarchy violation(s) across runs")
    return 1 if rep.failures() else 0


def cmd_report(args) -> int:
    path = args.input
    if os.path.isdir(path):
        path = os.path.join(path, "summary.csv")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty report")
    header, body = rows[0], rows[1:]

    def cell(v: str) -> str:
        try:
            x = float(v)
        except ValueError:
            return v
        return f"{100 * x:.1f}" if "." in v and 0.0 <= x <= 1.0 else v

    print(format_table(header, [[cell(v) for v in r] for r in body]), end="")
    return 0


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nested-tagger", description="Nested named-entity tagging toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_schema(sp):
        sp.add_argument("--schema", help="schema file (default: bundled directory schema)")
        return sp

    c = with_schema(sub.add_parser("convert", help="re-encode a TSV corpus in another tag format"))
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--from-format", choices=FORMATS, help="tag format of the input (default: its header)")
    c.add_argument("--to-format", choices=FORMATS, required=True)
    c.add_argument("--mode", choices=("levels", JOINT, L1, FLAT), default="levels",
                   help="tag columns to write")
    c.set_defaults(func=cmd_convert)

    pr = with_schema(sub.add_parser("project", help="project gold entities onto OCR text"))
    pr.add_argument("--gold", required=True)
    pr.add_argument("--noisy-text", required=True, help="JSONL of {source_id, text}")
    pr.add_argument("--out", required=True)
    pr.add_argument("--report", help="projection report JSON")
    pr.set_defaults(func=cmd_project)

    sy = with_schema(sub.add_parser("synth", help="generate a synthetic directory corpus"))
    sy.add_argument("--n", type=int, default=2000)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out", required=True)
    sy.add_argument("--noisy-text-out", help="also write OCR-like texts (JSONL)")
    sy.add_argument("--noise-rate", type=float, default=NoiseConfig.rate)
    sy.add_argument("--digit-bias", type=float, default=NoiseConfig.digit_bias)
    sy.set_defaults(func=cmd_synth)

    tr = with_schema(sub.add_parser("train", help="train a tagger"))
    tr.add_argument("--train", required=True)
    tr.add_argument("--dev", required=True)
    tr.add_argument("--strategy", choices=STRATEGIES, required=True)
    tr.add_argument("--format", choices=FORMATS, default=IOB2)
    tr.add_argument("--config", help="training config JSON")
    tr.add_argument("--out", required=True, help="model file")
    tr.add_argument("-v", "--verbose", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = with_schema(sub.add_parser("eval", help="score a model on a corpus"))
    ev.add_argument("--model", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--out", help="metrics CSV")
    ev.add_argument("--predictions", help="write predicted corpus")
    ev.add_argument("--fail-on-violations", action="store_true")
    ev.set_defaults(func=cmd_eval)

    ex = with_schema(sub.add_parser("experiment", help="run the strategy x format x seed matrix"))
    ex.add_argument("--corpus", required=True)
    ex.add_argument("--noisy-corpus")
    ex.add_argument("--strategies", type=lambda v: _csv_list(v, STRATEGIES), default=["M1", "M2", "M3"])
    ex.add_argument("--formats", type=lambda v: _csv_list(v, FORMATS), default=[IO, IOB2])
    ex.add_argument("--seeds", type=lambda v: _csv_list(v, cast=int), default=None,
                    help="comma-separated training seeds (default: the config seed)")
    ex.add_argument("--split-seed", type=int, default=0)
    ex.add_argument("--config")
    ex.add_argument("--out-dir", required=True)
    ex.add_argument("--jobs", type=int, default=1)
    ex.add_argument("--save-models", action="store_true")
    ex.add_argument("--fail-on-violations", action="store_true")
    ex.set_defaults(func=cmd_experiment)

    rp = sub.add_parser("report", help="print a metrics CSV or an experiment summary as a table")
    rp.add_argument("--in", dest="input", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ViolationsFound as exc:
        _log(f"nested-tagger: {exc}")
        return 2
    except (InputError, ValueError, KeyError, *INPUT_ERRORS) as exc:
        _log(f"nested-tagger: error: {exc}")
        return 1
    except Exception as exc:  # internal failure
        _log(f"nested-tagger: internal error: {type(exc).__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
