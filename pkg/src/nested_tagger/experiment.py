"""Experiment matrix: strategies x formats x corpora x seeds, scored on a held-out test split."""

from __future__ import annotations

import csv
import hashlib
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Corpus, split
from .metrics import (FLAT_SCOPE, PRF, SCOPES, Confusion, EvalReport, flat_items, format_table, full_report,
                      prf_from_items, report_csv)
from .schema import FORMATS, LabelSchema
from .tagcodec import chunk
from .tagger import FLAT_STRATEGY, STRATEGIES, TrainConfig, dumps_model, predict_corpus, predict_tags, train

SPLIT_RATIOS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class Cell:
    corpus: str
    strategy: str
    format: str
    seed: int

    @property
    def name(self) -> str:
        return f"{self.corpus}_{self.strategy}_{self.format}_seed{self.seed}"


@dataclass
class RunResult:
    cell: Cell
    report: EvalReport | None = None
    model_sha256: str = ""
    best_step: int = 0
    error: str = ""
    model_bytes: bytes | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class ExperimentReport:
    runs: list[RunResult]
    schema: LabelSchema

    def failures(self) -> list[RunResult]:
        return [r for r in self.runs if not r.ok]

    def groups(self) -> dict[tuple[str, str, str], list[RunResult]]:
        out: dict[tuple[str, str, str], list[RunResult]] = {}
        for r in self.runs:
            if r.ok:
                out.setdefault((r.cell.corpus, r.cell.strategy, r.cell.format), []).append(r)
        return out

    def mean_scope(self, corpus: str, strategy: str, fmt: str, scope: str, stat: str = "f1") -> float:
        runs = self.groups().get((corpus, strategy, fmt), [])
        vals = [getattr(r.report.scopes[scope], stat) for r in runs if scope in r.report.scopes]
        return float(np.mean(vals)) if vals else float("nan")

    def mean_type(self, corpus: str, strategy: str, fmt: str, etype: str) -> float:
        runs = self.groups().get((corpus, strategy, fmt), [])
        vals = [r.report.per_type[etype].f1 for r in runs if etype in r.report.per_type]
        return float(np.mean(vals)) if vals else float("nan")

    def violations(self, corpus: str, strategy: str, fmt: str) -> int:
        return sum(r.report.violations for r in self.groups().get((corpus, strategy, fmt), []))


# --- single cell ------------------------------------------------------------------

def _flat_report(gold: Sequence, pred_tags, schema: LabelSchema, fmt: str) -> EvalReport:
    """Scores for the flat baseline: only the Flat scope is meaningful."""
    total = PRF(0, 0, 0)
    for g, tags in zip(gold, pred_tags):
        total += prf_from_items(flat_items(g, schema, fmt), chunk(tags.tags))
    return EvalReport({FLAT_SCOPE: total}, {}, Confusion([], np.zeros((0, 0), dtype=np.int64)), 0)


def run_cell(cell: Cell, splits: tuple[Corpus, Corpus, Corpus], schema: LabelSchema, cfg: TrainConfig,
             keep_model: bool = False) -> RunResult:
    train_c, dev_c, test_c = splits
    try:
        model = train(train_c.entries, dev_c.entries, cell.strategy, cell.format, schema,
                      replace(cfg, seed=cell.seed))
        if cell.strategy == FLAT_STRATEGY:
            report = _flat_report(test_c.entries, predict_tags(model, test_c.entries), schema, cell.format)
        else:
            report = full_report(test_c.entries, predict_corpus(model, test_c.entries), schema, cell.format)
        blob = dumps_model(model)
        best = max((h["step"] for h in model.history if h["dev_f1"] == max(x["dev_f1"] for x in model.history)),
                   default=0)
        return RunResult(cell, report, hashlib.sha256(blob).hexdigest(), best,
                         model_bytes=blob if keep_model else None)
    except Exception as exc:  # the matrix carries on; the failure is reported
        return RunResult(cell, error=f"{type(exc).__name__}: {exc}")


def _run_cell_star(args):
    return run_cell(*args)


def run_experiment(gold_corpus: Corpus, noisy_corpus: Corpus | None, strategies: Sequence[str],
                   formats: Sequence[str], seeds: Sequence[int], schema: LabelSchema,
                   cfg: TrainConfig = TrainConfig(), split_seed: int = 0, jobs: int = 1,
                   keep_models: bool = False) -> ExperimentReport:
    """Train and score every cell of the matrix.

    Both corpora share one split by ``source_id``: the gold corpus is shuffled
    with ``split_seed`` and each noisy part keeps the entries that survived
    projection.  Seeds vary the training run only.
    """
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    for f in formats:
        if f not in FORMATS:
            raise ValueError(f"unknown format {f!r}")
    parts = split(gold_corpus, SPLIT_RATIOS, split_seed)
    corpora = {"clean": parts}
    if noisy_corpus is not None:
        have = noisy_corpus.by_id()
        corpora["noisy"] = tuple(noisy_corpus.subset([e.source_id for e in p if e.source_id in have])
                                 for p in parts)
    cells = [Cell(c, s, f, seed) for c in corpora for s in strategies for f in formats for seed in seeds]
    args = [(cell, corpora[cell.corpus], schema, cfg, keep_models) for cell in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_cell_star, args))
    else:
        runs = [run_cell(*a) for a in args]
    return ExperimentReport(runs, schema)


# --- output ---------------------------------------------------------------------

def _csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def runs_csv(rep: ExperimentReport) -> str:
    header = ["corpus", "strategy", "format", "seed", "status", "violations", "best_step", "model_sha256"]
    for scope in SCOPES:
        header += [f"{scope}_precision", f"{scope}_recall", f"{scope}_f1"]
    rows = [header]
    for r in rep.runs:
        c = r.cell
        row = [c.corpus, c.strategy, c.format, c.seed, "ok" if r.ok else f"failed: {r.error}"]
        if r.ok:
            row += [r.report.violations, r.best_step, r.model_sha256]
            for scope in SCOPES:
                p = r.report.scopes.get(scope)
                row += [f"{p.precision:.6f}", f"{p.recall:.6f}", f"{p.f1:.6f}"] if p else ["", "", ""]
        rows.append(row)
    return _csv(rows)


def _fmt(v: float) -> str:
    return "" if v != v else f"{v:.6f}"


def summary_csv(rep: ExperimentReport) -> str:
    rows = [["corpus", "strategy", "format", "runs", "violations", *(f"{s}_f1" for s in SCOPES)]]
    for (corpus, strat, fmt), runs in rep.groups().items():
        rows.append([corpus, strat, fmt, len(runs), rep.violations(corpus, strat, fmt),
                     *(_fmt(rep.mean_scope(corpus, strat, fmt, s)) for s in SCOPES)])
    return _csv(rows)


def per_type_csv(rep: ExperimentReport) -> str:
    types = [t.name for t in rep.schema.types]
    rows = [["corpus", "strategy", "format", *types]]
    for (corpus, strat, fmt) in rep.groups():
        if strat == FLAT_STRATEGY:
            continue
        rows.append([corpus, strat, fmt, *(_fmt(rep.mean_type(corpus, strat, fmt, t)) for t in types)])
    return _csv(rows)


def summed_confusion(runs: Sequence[RunResult]) -> Confusion | None:
    mats = [r.report.confusion for r in runs if r.report.confusion.labels]
    if not mats:
        return None
    labels = list(mats[0].labels)
    labels += sorted({lab for m in mats for lab in m.labels} - set(labels))
    pos = {lab: i for i, lab in enumerate(labels)}
    total = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for m in mats:
        idx = [pos[lab] for lab in m.labels]
        total[np.ix_(idx, idx)] += m.counts
    return Confusion(labels, total)


def scope_table(rep: ExperimentReport) -> str:
    """Mean F1 per scope, one row per (strategy, format), one column block per corpus."""
    corpora = sorted({c for c, _, _ in rep.groups()}, key=lambda c: (c != "clean", c))
    keys = sorted({(s, f) for _, s, f in rep.groups()}, key=lambda k: (STRATEGIES.index(k[0]), k[1]))
    header = ["strategy", "format"] + [f"{c}:{s}" for c in corpora for s in SCOPES]
    rows = []
    for s, f in keys:
        rows.append([s, f] + [_pct(rep.mean_scope(c, s, f, sc)) for c in corpora for sc in SCOPES])
    return format_table(header, rows)


def type_table(rep: ExperimentReport, corpus: str) -> str:
    types = [t.name for t in rep.schema.types]
    keys = sorted({(s, f) for c, s, f in rep.groups() if c == corpus and s != FLAT_STRATEGY},
                  key=lambda k: (STRATEGIES.index(k[0]), k[1]))
    rows = [[s, f] + [_pct(rep.mean_type(corpus, s, f, t)) for t in types] for s, f in keys]
    return format_table(["strategy", "format", *types], rows)


def _pct(v: float) -> str:
    return "-" if v != v else f"{100 * v:.1f}"


def text_report(rep: ExperimentReport) -> str:
    parts = ["Mean F1 by scope\n", scope_table(rep)]
    for corpus in sorted({c for c, _, _ in rep.groups()}, key=lambda c: (c != "clean", c)):
        parts += [f"\nMean F1 by entity type ({corpus})\n", type_table(rep, corpus)]
    viol = [[c, s, f, rep.violations(c, s, f)] for (c, s, f) in rep.groups() if s != FLAT_STRATEGY]
    parts += ["\nHierarchy violations (summed over seeds)\n", format_table(["corpus", "strategy", "format",
                                                                             "violations"], viol)]
    if rep.failures():
        parts.append("\nFailed runs\n")
        parts += [f"  {r.cell.name}: {r.error}\n" for r in rep.failures()]
    return "".join(parts)


def write_report(rep: ExperimentReport, out_dir) -> list[str]:
    """Write CSV outputs and per-run files under ``out_dir``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name: str, data: str | bytes):
        path = os.path.join(out_dir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        mode = "wb" if isinstance(data, bytes) else "w"
        with open(path, mode, **({} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        written.append(path)

    put("runs.csv", runs_csv(rep))
    put("summary.csv", summary_csv(rep))
    put("per_type.csv", per_type_csv(rep))
    put("report.txt", text_report(rep))
    for r in rep.runs:
        if r.ok and r.report.per_type:
            put(os.path.join("runs", f"{r.cell.name}.csv"), report_csv(r.report))
        if r.ok and r.model_bytes is not None:
            put(os.path.join("models", f"{r.cell.name}.model"), r.model_bytes)
    for (corpus, strat, fmt), runs in rep.groups().items():
        conf = summed_confusion(runs)
        if conf is not None:
            put(os.path.join("confusion", f"{corpus}_{strat}_{fmt}.csv"), conf.to_csv())
    return written
