"""Character alignment of clean and OCR text, and projection of gold spans onto OCR text."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping

import numpy as np

from . import _kernels
from .schema import LabelSchema
from .tagcodec import AnnotatedEntry, Entity, tokenize

GAP = -1
OP_NAMES = ("match", "substitute", "delete", "insert")


@dataclass(frozen=True, eq=False)
class AlignmentMap:
    gold: str
    noisy: str
    ops: np.ndarray  # int8 op codes, see OP_NAMES
    gold_to_noisy: np.ndarray  # per gold char: noisy index or GAP
    cost: int

    @property
    def op_names(self) -> list[str]:
        return [OP_NAMES[o] for o in self.ops]

    def replay(self) -> str:
        """Apply the edit script to ``gold``; equals ``noisy`` by construction."""
        out = []
        i = j = 0
        for op in self.ops:
            if op == _kernels.MATCH:
                out.append(self.gold[i])
            if op in (_kernels.SUBSTITUTE, _kernels.INSERT):
                out.append(self.noisy[j])
            if op != _kernels.INSERT:
                i += 1
            if op != _kernels.DELETE:
                j += 1
        return "".join(out)


def align_chars(gold: str, noisy: str, kernels=None) -> AlignmentMap:
    """Minimum edit-distance alignment (unit costs, ties: match > substitute > delete > insert).

    The backtrace runs from the end of both strings, so among equal-cost
    scripts the preferred operation is taken as late as possible.
    """
    k = kernels or _kernels.BACKEND
    cost, ops = k.align(_kernels.codepoints(gold), _kernels.codepoints(noisy))
    g2n = np.full(len(gold), GAP, dtype=np.int64)
    i = j = 0
    for op in ops:
        if op == _kernels.INSERT:
            j += 1
        elif op == _kernels.DELETE:
            i += 1
        else:
            g2n[i] = j
            i += 1
            j += 1
    return AlignmentMap(gold, noisy, np.asarray(ops, dtype=np.int8), g2n, int(cost))


@dataclass
class ProjectionReport:
    entities_total: int = 0
    entities_projected: int = 0
    entities_dropped: int = 0
    entries_total: int = 0
    entries_dropped: int = 0
    entries_missing: int = 0

    def __add__(self, other: "ProjectionReport") -> "ProjectionReport":
        return ProjectionReport(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        kept = self.entries_total - self.entries_dropped
        pct = 100.0 * self.entities_projected / self.entities_total if self.entities_total else 100.0
        return (f"entries: {kept}/{self.entries_total} kept ({self.entries_dropped} dropped, "
                f"{self.entries_missing} without OCR text)\n"
                f"entities: {self.entities_projected}/{self.entities_total} projected ({pct:.1f}%), "
                f"{self.entities_dropped} dropped")


def _char_span(entry: AnnotatedEntry, e: Entity) -> tuple[int, int]:
    return entry.tokens[e.start].start, entry.tokens[e.end - 1].end


def _assign_tokens(tokens, spans: list[tuple[int, int] | None]) -> list[list[int]]:
    """Token indices per span by majority character overlap.

    A token goes to the span covering most of its characters, provided that
    span covers at least as many characters as no span does; equal overlaps
    go to the earlier-starting span.
    """
    owned: list[list[int]] = [[] for _ in spans]
    live = sorted((s[0], idx) for idx, s in enumerate(spans) if s is not None)
    for t, tok in enumerate(tokens):
        best, best_ov, covered = -1, 0, 0
        for _, idx in live:
            lo, hi = spans[idx]
            if lo >= tok.end:
                break
            ov = min(hi, tok.end) - max(lo, tok.start)
            if ov > 0:
                covered += ov
                if ov > best_ov:
                    best, best_ov = idx, ov
        if best >= 0 and best_ov >= (tok.end - tok.start) - covered:
            owned[best].append(t)
    return owned


def project_entry(entry: AnnotatedEntry, noisy_text: str, schema: LabelSchema | None = None,
                  kernels=None) -> tuple[AnnotatedEntry | None, ProjectionReport]:
    """Move ``entry``'s entities onto ``noisy_text``.

    Entities whose characters are all deleted by the alignment, or that end
    up owning no noisy token, are dropped; level-2 entities are clamped into
    their parent's projection.  Returns ``None`` when nothing survives.
    ``schema`` is unused by the projection itself (nesting is inherited from
    the gold entry) and kept for interface symmetry.
    """
    amap = align_chars(entry.text, noisy_text, kernels)
    g2n = amap.gold_to_noisy
    ents = entry.entities
    char_spans: list[tuple[int, int] | None] = []
    for e in ents:
        lo, hi = _char_span(entry, e)
        hit = g2n[lo:hi]
        hit = hit[hit != GAP]
        span = (int(hit.min()), int(hit.max()) + 1) if hit.size else None
        if span is not None and e.level == 2:
            parent = char_spans[e.parent]
            span = None if parent is None else (max(span[0], parent[0]), min(span[1], parent[1]))
            if span is not None and span[0] >= span[1]:
                span = None
        char_spans.append(span)

    tokens = tokenize(noisy_text)
    token_spans: list[tuple[int, int] | None] = [None] * len(ents)
    for level in (1, 2):
        idx = [i for i, e in enumerate(ents) if e.level == level]
        owned = _assign_tokens(tokens, [char_spans[i] for i in idx])
        for i, toks in zip(idx, owned):
            if not toks:
                continue
            lo, hi = toks[0], toks[-1] + 1
            if level == 2:
                parent = token_spans[ents[i].parent]
                if parent is None:
                    continue
                lo, hi = max(lo, parent[0]), min(hi, parent[1])
                if lo >= hi:
                    continue
            token_spans[i] = (lo, hi)

    new_index: dict[int, int] = {}
    kept: list[Entity] = []
    for i, e in enumerate(ents):
        if token_spans[i] is None:
            continue
        parent = None if e.parent is None else new_index[e.parent]
        new_index[i] = len(kept)
        kept.append(Entity(token_spans[i][0], token_spans[i][1], e.level, e.etype, parent))

    report = ProjectionReport(entities_total=len(ents), entities_projected=len(kept),
                              entities_dropped=len(ents) - len(kept), entries_total=1)
    if not kept:
        report.entries_dropped = 1
        return None, report
    return AnnotatedEntry(noisy_text, tokens, tuple(kept), entry.source_id), report


def build_noisy_corpus(gold: Iterable[AnnotatedEntry], noisy_texts: Mapping[str, str],
                       schema: LabelSchema | None = None, kernels=None
                       ) -> tuple[list[AnnotatedEntry], ProjectionReport]:
    """Project every gold entry onto its OCR text (keyed by ``source_id``)."""
    out = []
    total = ProjectionReport()
    for entry in gold:
        if entry.source_id not in noisy_texts:
            n = len(entry.entities)
            total += ProjectionReport(n, 0, n, 1, 1, 1)
            continue
        projected, report = project_entry(entry, noisy_texts[entry.source_id], schema, kernels)
        total += report
        if projected is not None:
            out.append(projected)
    return out, total


def read_noisy_texts(path) -> dict[str, str]:
    """JSONL of ``{"source_id": ..., "text": ...}`` objects."""
    texts = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                texts[str(obj["source_id"])] = obj["text"]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc}") from None
    return texts


def write_noisy_texts(path, texts: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, text in texts.items():
            fh.write(json.dumps({"source_id": sid, "text": text}, ensure_ascii=False) + "\n")
