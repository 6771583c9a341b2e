"""Entity-level precision/recall/F1 over nested annotations.

Scopes:

``All``     every entity of both levels, keyed ``(level, type, span)``
``L1``/``L2``  one level only
``L1L2``    level-2 entities keyed by ``parent type + own type``
``PL1PL2``  level-2 entities keyed by the prefixed joint tags over their span
``Flat``    entities after collapsing joint labels to flat types

Entities are first passed through the tagging format (encode then decode),
so under IO adjacent same-type entities are merged on both sides exactly as
a tag-based scorer would see them.  Matching is exact on label and span.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .schema import LabelSchema, joint_label_set
from .tagcodec import (JOINT, AnnotatedEntry, Entity, chunk, decode, encode_entities, flatten_entities,
                       joint_class, level_tags)

ALL, SCOPE_L1, SCOPE_L2, L1L2, PL1PL2, FLAT_SCOPE = "All", "L1", "L2", "L1L2", "PL1PL2", "Flat"
SCOPES = (ALL, SCOPE_L1, SCOPE_L2, L1L2, PL1PL2, FLAT_SCOPE)


class MetricsError(ValueError):
    """Gold and predicted corpora do not line up."""


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def prf_from_items(gold: Iterable, pred: Iterable) -> PRF:
    g, p = Counter(gold), Counter(pred)
    tp = sum((g & p).values())
    return PRF(tp, sum(p.values()) - tp, sum(g.values()) - tp)


@dataclass(frozen=True)
class _Normal:
    """An entry's entities and joint tags after a round trip through the format."""

    entities: tuple[Entity, ...]
    tags: tuple[str, ...]


def _normalize(entry: AnnotatedEntry, fmt: str) -> _Normal:
    n = len(entry.tokens)
    tags = encode_entities(entry.entities, n, fmt, JOINT).tags
    return _Normal(tuple(decode(encode_entities(entry.entities, n, fmt, JOINT))), tags)


def _items(norm: _Normal, scope: str, fmt: str, schema: LabelSchema | None) -> list[tuple]:
    ents = norm.entities
    if scope == ALL:
        return [(e.level, e.etype, e.start, e.end) for e in ents]
    if scope == SCOPE_L1:
        return [(e.etype, e.start, e.end) for e in ents if e.level == 1]
    if scope == SCOPE_L2:
        return [(e.etype, e.start, e.end) for e in ents if e.level == 2]
    if scope == L1L2:
        return [(f"{ents[e.parent].etype}+{e.etype}", e.start, e.end) for e in ents if e.level == 2]
    if scope == PL1PL2:
        return [(norm.tags[e.start:e.end], e.start, e.end) for e in ents if e.level == 2]
    if scope == FLAT_SCOPE:
        if schema is None:
            raise ValueError("the Flat scope needs a schema")
        flat = flatten_entities(ents, schema)
        return list(chunk(level_tags(flat, len(norm.tags), fmt)))
    raise ValueError(f"unknown scope {scope!r}")


def _pairs(gold: Sequence[AnnotatedEntry], pred: Sequence[AnnotatedEntry]):
    by_id = {e.source_id: e for e in pred}
    if len(by_id) != len(pred) or len(gold) != len(pred):
        raise MetricsError(f"corpus size/id mismatch: {len(gold)} gold vs {len(pred)} predicted entries")
    for g in gold:
        p = by_id.get(g.source_id)
        if p is None:
            raise MetricsError(f"no prediction for entry {g.source_id!r}")
        if len(p.tokens) != len(g.tokens):
            raise MetricsError(f"{g.source_id}: {len(g.tokens)} gold tokens vs {len(p.tokens)} predicted")
        yield g, p


def score_scope(gold: Sequence[AnnotatedEntry], pred: Sequence[AnnotatedEntry], scope: str, fmt: str,
                schema: LabelSchema | None = None) -> PRF:
    total = PRF(0, 0, 0)
    for g, p in _pairs(gold, pred):
        total += prf_from_items(_items(_normalize(g, fmt), scope, fmt, schema),
                                _items(_normalize(p, fmt), scope, fmt, schema))
    return total


def flat_items(entry: AnnotatedEntry, schema: LabelSchema, fmt: str) -> list[tuple[str, int, int]]:
    """Flat-scope items of a nested entry (what a flat tagger is scored against)."""
    return _items(_normalize(entry, fmt), FLAT_SCOPE, fmt, schema)


@dataclass
class Confusion:
    labels: list[str]
    counts: np.ndarray  # rows: gold joint class, columns: predicted

    def normalized(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_csv(self, normalized: bool = True) -> str:
        data = self.normalized() if normalized else self.counts
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gold\\pred", *self.labels])
        for label, row in zip(self.labels, data):
            w.writerow([label, *(f"{v:.6f}" if normalized else str(int(v)) for v in row)])
        return buf.getvalue()


@dataclass
class EvalReport:
    scopes: dict[str, PRF]
    per_type: dict[str, PRF]
    confusion: Confusion
    violations: int = 0
    extra: dict[str, float] = field(default_factory=dict)


def confusion_matrix(pairs: Iterable[tuple[_Normal, _Normal]], schema: LabelSchema) -> Confusion:
    counts: Counter = Counter()
    for g, p in pairs:
        for gt, pt in zip(g.tags, p.tags):
            counts[(str(joint_class(gt)), str(joint_class(pt)))] += 1
    labels = [str(j) for j in joint_label_set(schema)]
    extra = sorted({lab for pair in counts for lab in pair} - set(labels))
    labels += extra
    pos = {lab: i for i, lab in enumerate(labels)}
    mat = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for (gl, pl), c in counts.items():
        mat[pos[gl], pos[pl]] = c
    return Confusion(labels, mat)


def full_report(gold: Sequence[AnnotatedEntry], pred: Sequence[AnnotatedEntry], schema: LabelSchema,
                fmt: str) -> EvalReport:
    norm = [(_normalize(g, fmt), _normalize(p, fmt)) for g, p in _pairs(gold, pred)]
    scopes = {}
    for scope in SCOPES:
        total = PRF(0, 0, 0)
        for g, p in norm:
            total += prf_from_items(_items(g, scope, fmt, schema), _items(p, scope, fmt, schema))
        scopes[scope] = total
    by_type_gold: Counter = Counter()
    by_type_pred: Counter = Counter()
    for k, (g, p) in enumerate(norm):
        by_type_gold.update((k, *it) for it in _items(g, ALL, fmt, schema))
        by_type_pred.update((k, *it) for it in _items(p, ALL, fmt, schema))
    per_type = {}
    for etype in sorted({it[2] for it in by_type_gold} | {it[2] for it in by_type_pred}):
        per_type[etype] = prf_from_items(
            {it: c for it, c in by_type_gold.items() if it[2] == etype},
            {it: c for it, c in by_type_pred.items() if it[2] == etype},
        )
    count, _ = hierarchy_violations(pred, schema)
    return EvalReport(scopes, per_type, confusion_matrix(norm, schema), count)


def hierarchy_violations(pred: Iterable[AnnotatedEntry], schema: LabelSchema
                         ) -> tuple[int, list[tuple[str, str, str, int, int]]]:
    """Level-2 entities whose (parent type, own type) pair the schema does not authorize."""
    found = []
    for entry in pred:
        for e in entry.entities:
            if e.level == 2:
                parent = entry.entities[e.parent].etype
                if not schema.is_authorized(parent, e.etype):
                    found.append((entry.source_id, parent, e.etype, e.start, e.end))
    return len(found), found


# --- tabular output -----------------------------------------------------------

def prf_row(prf: PRF) -> dict[str, str]:
    return {"precision": f"{prf.precision:.6f}", "recall": f"{prf.recall:.6f}", "f1": f"{prf.f1:.6f}",
            "tp": str(prf.tp), "fp": str(prf.fp), "fn": str(prf.fn)}


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "name", "precision", "recall", "f1", "tp", "fp", "fn"])
    for kind, table in (("scope", report.scopes), ("type", report.per_type)):
        for name, prf in table.items():
            r = prf_row(prf)
            w.writerow([kind, name, r["precision"], r["recall"], r["f1"], r["tp"], r["fp"], r["fn"]])
    w.writerow(["violations", "hierarchy", "", "", "", str(report.violations), "", ""])
    return buf.getvalue()


def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Plain aligned-column text table."""
    rows = [[str(c) for c in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    line = "  ".join(f"{h:<{w}}" for h, w in zip(header, widths))
    out = [line, "  ".join("-" * w for w in widths)]
    for r in rows:
        out.append("  ".join(f"{c:>{w}}" if i else f"{c:<{w}}" for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(out) + "\n"


def report_table(report: EvalReport) -> str:
    rows = [[name, f"{100 * p.precision:.1f}", f"{100 * p.recall:.1f}", f"{100 * p.f1:.1f}"]
            for name, p in report.scopes.items()]
    rows += [[f"  {name}", f"{100 * p.precision:.1f}", f"{100 * p.recall:.1f}", f"{100 * p.f1:.1f}"]
             for name, p in report.per_type.items()]
    return format_table(["scope/type", "P", "R", "F1"], rows) + f"hierarchy violations: {report.violations}\n"

