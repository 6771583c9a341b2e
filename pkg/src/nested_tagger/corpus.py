"""Corpus container, TSV/JSONL interchange, splitting, synthetic entries and OCR noise.

TSV layout (UTF-8, LF)::

    # provenance = synthetic
    # schema = 3f0c...
    # format = IOB2
    token	L1	L2
    # id = syn-000001
    # text = Dufour (Gabriel), libraire, r. de Vaugirard, 7
    Dufour	B-PER	O
    ...
    <blank line between entries>

The column header selects what the tag columns hold: ``L1 L2`` (default),
``JOINT``, ``L1`` alone or ``FLAT``.  JSONL holds one metadata object on
the first line followed by one entry per line with character token offsets
and ``[type, level, start, end, parent]`` entity rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .schema import FORMATS, IOB2, LabelSchema
from .tagcodec import (FLAT, JOINT, L1, L2, AnnotatedEntry, Entity, EntryError, TagSequence, Token, compose_tags,
                       decode, encode_entities, split_tag, tag_vocabulary, tokenize, validate_entry)

PROVENANCES = ("gold", "noisy", "synthetic")
JSONL_FORMAT = "nested-tagger-corpus"


class CorpusError(ValueError):
    """Malformed corpus file or invalid corpus content."""


@dataclass
class Corpus:
    entries: list[AnnotatedEntry]
    schema_fingerprint: str = ""
    provenance: str = "gold"

    def __post_init__(self):
        self.entries = list(self.entries)
        ids = [e.source_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})[:5]
            raise CorpusError(f"duplicate source ids: {dup}")
        if self.provenance not in PROVENANCES:
            raise CorpusError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    def validate(self, schema: LabelSchema) -> None:
        for e in self.entries:
            validate_entry(e, schema)

    def by_id(self) -> dict[str, AnnotatedEntry]:
        return {e.source_id: e for e in self.entries}

    def subset(self, ids: Iterable[str]) -> "Corpus":
        table = self.by_id()
        return Corpus([table[i] for i in ids], self.schema_fingerprint, self.provenance)


# --- TSV ---------------------------------------------------------------------------

_TSV_COLUMNS = {("L1", "L2"): "levels", ("JOINT",): JOINT, ("L1",): L1, ("FLAT",): FLAT}


def _tokens_from_text(text: str, words: Sequence[str]) -> tuple[Token, ...]:
    toks = []
    pos = 0
    for w in words:
        at = text.find(w, pos)
        if at < 0:
            raise CorpusError(f"token {w!r} not found in entry text")
        toks.append(Token(w, at, at + len(w)))
        pos = at + len(w)
    return tuple(toks)


def write_tsv(corpus: Corpus, path, fmt: str = IOB2, columns: str = "levels",
              schema: LabelSchema | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_tsv(corpus, fmt, columns, schema))


def dumps_tsv(corpus: Corpus, fmt: str = IOB2, columns: str = "levels",
              schema: LabelSchema | None = None) -> str:
    header = {"levels": "L1\tL2", JOINT: "JOINT", L1: "L1", FLAT: "FLAT"}
    if columns not in header:
        raise ValueError(f"unknown TSV column layout {columns!r}")
    lines = [f"# provenance = {corpus.provenance}", f"# schema = {corpus.schema_fingerprint}",
             f"# format = {fmt}", f"token\t{header[columns]}"]
    for entry in corpus:
        n = len(entry.tokens)
        if columns == "levels":
            cols = [encode_entities(entry.entities, n, fmt, L1).tags, encode_entities(entry.entities, n, fmt, L2).tags]
        else:
            cols = [encode_entities(entry.entities, n, fmt, columns, schema).tags]
        lines.append(f"# id = {entry.source_id}")
        lines.append(f"# text = {entry.text}")
        for i, tok in enumerate(entry.tokens):
            lines.append("\t".join([tok.text, *(c[i] for c in cols)]))
        lines.append("")
    return "\n".join(lines) + "\n"


def read_tsv(path, schema: LabelSchema | None = None, fmt: str | None = None) -> tuple[Corpus, str]:
    """Read a TSV corpus; returns ``(corpus, tag format)``.

    ``fmt`` forces the tag format instead of the ``# format`` header line.
    """
    with open(path, encoding="utf-8") as fh:
        return loads_tsv(fh.read(), schema, source=str(path), fmt=fmt)


def loads_tsv(text: str, schema: LabelSchema | None = None, source: str = "<tsv>",
              fmt: str | None = None) -> tuple[Corpus, str]:
    meta = {"provenance": "gold", "schema": "", "format": IOB2}
    layout = None
    entries = []
    block: list[tuple[int, list[str]]] = []
    entry_meta: dict[str, str] = {}

    def flush():
        if not block and not entry_meta:
            return
        entries.append(_tsv_entry(block, entry_meta, layout, meta["format"], schema, source, len(entries)))
        block.clear()
        entry_meta.clear()

    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("# "):
            key, sep, value = line[2:].partition(" = ")
            if not sep:
                continue
            if layout is None:
                meta[key.strip()] = value
            else:
                key = key.strip()
                if key == "id" and (block or "id" in entry_meta):
                    flush()
                entry_meta[key] = value
            continue
        cells = line.split("\t")
        if layout is None:
            if cells[0] != "token" or tuple(cells[1:]) not in _TSV_COLUMNS:
                raise CorpusError(f"{source}:{lineno}: bad TSV header {line!r}")
            layout = _TSV_COLUMNS[tuple(cells[1:])]
            if fmt is not None:
                meta["format"] = fmt
            if meta["format"] not in FORMATS:
                raise CorpusError(f"{source}: unknown tag format {meta['format']!r}")
            continue
        width = 3 if layout == "levels" else 2
        if len(cells) != width:
            raise CorpusError(f"{source}:{lineno}: expected {width} columns, got {len(cells)}")
        block.append((lineno, cells))
    flush()
    if layout is None and text.strip():
        raise CorpusError(f"{source}: missing TSV header")
    corpus = Corpus(entries, meta["schema"], meta["provenance"])
    return corpus, meta["format"]


def _tsv_entry(block, entry_meta, layout, fmt, schema, source, index) -> AnnotatedEntry:
    words = [cells[0] for _, cells in block]
    sid = entry_meta.get("id", f"entry-{index:06d}")
    text = entry_meta.get("text", " ".join(words))
    try:
        tokens = _tokens_from_text(text, words)
        for _, cells in block:
            for tag in cells[1:]:
                if "+" in tag:
                    a, _, b = tag.partition("+")
                    split_tag(a), split_tag(b)
                else:
                    split_tag(tag)
    except ValueError as exc:
        raise CorpusError(f"{source}: entry {sid}: {exc}") from None
    if schema is not None and layout != FLAT:
        vocabs = ([set(tag_vocabulary(schema, fmt, L1)), set(tag_vocabulary(schema, fmt, L2))]
                  if layout == "levels" else [set(tag_vocabulary(schema, fmt, layout))])
        for lineno, cells in block:
            for tag, vocab in zip(cells[1:], vocabs):
                if tag not in vocab:
                    raise CorpusError(f"{source}:{lineno}: unknown tag {tag!r}")
    if layout == "levels":
        joint = compose_tags([c[1] for _, c in block], [c[2] for _, c in block])
        ents = decode(TagSequence(fmt, JOINT, joint))
    else:
        ents = decode(TagSequence(fmt, layout, [c[1] for _, c in block]))
    entry = AnnotatedEntry(text, tokens, tuple(ents), sid)
    if schema is not None and layout != FLAT:
        try:
            validate_entry(entry, schema)
        except EntryError as exc:
            raise CorpusError(f"{source}: {exc}") from None
    return entry


# --- JSONL -------------------------------------------------------------------------

def _entry_json(entry: AnnotatedEntry) -> str:
    obj = {
        "source_id": entry.source_id,
        "text": entry.text,
        "tokens": [[t.start, t.end] for t in entry.tokens],
        "entities": [[e.etype, e.level, e.start, e.end, e.parent] for e in entry.entities],
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def dumps_jsonl(corpus: Corpus) -> str:
    meta = {"meta": {"format": JSONL_FORMAT, "version": 1, "provenance": corpus.provenance,
                     "schema": corpus.schema_fingerprint}}
    lines = [json.dumps(meta, sort_keys=True, separators=(",", ":"))]
    lines += [_entry_json(e) for e in corpus]
    return "\n".join(lines) + "\n"


def write_jsonl(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_jsonl(corpus))


def loads_jsonl(text: str, schema: LabelSchema | None = None, source: str = "<jsonl>") -> Corpus:
    meta = {"provenance": "gold", "schema": ""}
    entries = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{source}:{lineno}: {exc}") from None
        if "meta" in obj:
            meta.update(obj["meta"])
            continue
        try:
            txt = obj["text"]
            if "tokens" in obj:
                tokens = tuple(Token(txt[s:e], s, e) for s, e in obj["tokens"])
            else:
                tokens = tokenize(txt)
            ents = [Entity(s, e, lv, t, p) for t, lv, s, e, p in obj.get("entities", [])]
            entry = AnnotatedEntry(txt, tokens, tuple(ents), str(obj["source_id"]))
            if schema is not None:
                validate_entry(entry, schema)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{source}:{lineno}: {exc}") from None
        entries.append(entry)
    return Corpus(entries, meta.get("schema", ""), meta.get("provenance", "gold"))


def read_jsonl(path, schema: LabelSchema | None = None) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return loads_jsonl(fh.read(), schema, source=str(path))


def read_corpus(path, schema: LabelSchema | None = None) -> Corpus:
    """Read TSV or JSONL by file extension (``.tsv``/``.conll`` vs anything else)."""
    if str(path).endswith((".tsv", ".conll", ".txt")):
        return read_tsv(path, schema)[0]
    return read_jsonl(path, schema)


def write_corpus(corpus: Corpus, path, fmt: str = IOB2) -> None:
    if str(path).endswith((".tsv", ".conll", ".txt")):
        write_tsv(corpus, path, fmt)
    else:
        write_jsonl(corpus, path)


# --- splitting ---------------------------------------------------------------------

def split(corpus: Corpus, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0
          ) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded shuffle, then ``floor(r * n)`` entries for train and dev; test takes the rest."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    n = len(corpus)
    if n < 3:
        raise CorpusError("cannot split a corpus of fewer than 3 entries")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_dev = math.floor(ratios[1] * n + 1e-9)
    parts = (perm[:n_train], perm[n_train:n_train + n_dev], perm[n_train + n_dev:])
    return tuple(Corpus([corpus.entries[i] for i in sorted(p)], corpus.schema_fingerprint, corpus.provenance)
                 for p in parts)


# --- OCR noise -----------------------------------------------------------------------

_CONFUSIONS = {
    "e": "cé", "c": "eo", "o": "ce", "l": "1I", "i": "1lí", "I": "1l", "S": "5", "b": "6h", "n": "u",
    "u": "n", "m": "n", "a": "à", "é": "e", "è": "e", "t": "f", "f": "t", "r": "t", "h": "b",
    # digits are often misread as letters or punctuation, which breaks the token apart
    "0": "o(O)", "1": "l|I/", "2": "z?", "3": "8)", "4": "A,", "5": "S;", "6": "b(", "7": "1/", "8": "B3",
    "9": "g,",
}
_LETTERS = "abcdefghijklmnopqrstuvwxyz"
_INSERTS = "'-" + _LETTERS
_DIGIT_INSERTS = " .,'"


@dataclass(frozen=True)
class NoiseConfig:
    """Per-character OCR edit model.

    Each character is edited with probability ``rate`` (digits:
    ``rate * (1 + digit_bias)``, capped at 1); the edit kind is drawn from
    ``mix`` = (substitute, delete, insert) with the substitution weight of
    digits also scaled by ``1 + digit_bias``.
    """

    rate: float = 0.05
    mix: tuple[float, float, float] = (0.6, 0.25, 0.15)
    digit_bias: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        if len(self.mix) != 3 or any(m < 0 for m in self.mix) or not math.isclose(sum(self.mix), 1.0):
            raise ValueError("mix must be three non-negative weights summing to 1")
        if self.digit_bias < 0:
            raise ValueError("digit_bias must be non-negative")


def _substitute(ch: str, rng: np.random.Generator) -> str:
    options = _CONFUSIONS.get(ch)
    if options and rng.random() < 0.8:
        return options[rng.integers(len(options))]
    pool = "0123456789" if ch.isdigit() else _LETTERS
    sub = ch
    while sub == ch:
        sub = pool[rng.integers(len(pool))]
    return sub


def inject_noise(text: str, cfg: NoiseConfig, rng: np.random.Generator) -> tuple[str, int]:
    """Noisy copy of ``text`` and the number of edits made, drawing from ``rng``."""
    out = []
    edits = 0
    sub_w, del_w, ins_w = cfg.mix
    for ch in text:
        digit = ch.isdigit()
        p = min(1.0, cfg.rate * (1.0 + cfg.digit_bias)) if digit else cfg.rate
        if rng.random() >= p:
            out.append(ch)
            continue
        edits += 1
        sw = sub_w * (1.0 + cfg.digit_bias) if digit else sub_w
        u = rng.random() * (sw + del_w + ins_w)
        if u < sw:
            out.append(_substitute(ch, rng))
        elif u < sw + del_w:
            pass
        else:
            pool = _DIGIT_INSERTS if digit else _INSERTS
            out.append(pool[rng.integers(len(pool))])
            out.append(ch)
    return "".join(out), edits


def noise_inject(text: str, cfg: NoiseConfig) -> str:
    return inject_noise(text, cfg, np.random.default_rng(cfg.seed))[0]


def noisy_texts(corpus: Iterable[AnnotatedEntry], cfg: NoiseConfig) -> dict[str, str]:
    """OCR-like text per entry, drawn from one stream seeded by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    return {e.source_id: inject_noise(e.text, cfg, rng)[0] for e in corpus}


# --- synthetic directory entries ------------------------------------------------------

def _lexicon(name: str) -> list[str]:
    text = resources.files("nested_tagger.data").joinpath(name).read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


@dataclass
class _Builder:
    text: str = ""
    spans: list = field(default_factory=list)  # (etype, level, char_start, char_end, parent index)

    def add(self, piece: str) -> tuple[int, int]:
        start = len(self.text)
        self.text += piece
        return start, len(self.text)

    def open(self, etype: str, level: int, parent: int | None = None) -> int:
        self.spans.append([etype, level, len(self.text), None, parent])
        return len(self.spans) - 1

    def close(self, idx: int) -> None:
        self.spans[idx][3] = len(self.text)

    def entity(self, etype: str, level: int, piece: str, parent: int | None = None) -> int:
        idx = self.open(etype, level, parent)
        self.add(piece)
        self.close(idx)
        return idx

    def build(self, source_id: str) -> AnnotatedEntry:
        tokens = tokenize(self.text)
        ents = []
        for etype, level, cs, ce, parent in self.spans:
            inside = [i for i, t in enumerate(tokens) if t.start >= cs and t.end <= ce]
            ents.append(Entity(inside[0], inside[-1] + 1, level, etype, parent))
        return AnnotatedEntry(self.text, tokens, tuple(ents), source_id)


class SyntheticDirectory:
    """Generator of trade-directory style entries.

    Name, optional person title, activity or full description, one or more
    addresses (street + number, sometimes a feature type or a second
    street), with type frequencies proportioned to the reference counts
    (per 8445 entries): PER 8441, ACT 6176, DESC 371, SPAT 8651, TITREH 301,
    TITREP 94, TITRE 13, LOC 9417, CARDINAL 8416, FT 76.
    """

    P_PER = 8441 / 8445
    P_TITREH = 301 / 8445
    P_TITRE = 13 / 8445
    P_DESC = 371 / 8445
    P_ACT = (6176 - 371) / 8445  # level-1 activities; every DESC holds one level-2 ACT
    P_TITREP_IN_DESC = 94 / 371
    P_FT = 76 / 8651
    P_SECOND_LOC = 0.07
    P_SECOND_SPAT = 0.05
    P_NO_SPAT = 0.03
    P_CARDINAL = 0.97

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.lex = {name: _lexicon(f"{name}.txt") for name in (
            "surnames", "firstnames", "activities", "street_types", "streets", "feature_types",
            "titles_person", "titles_professional", "titles_other")}

    def _pick(self, name: str) -> str:
        items = self.lex[name]
        return items[self.rng.integers(len(items))]

    def _chance(self, p: float) -> bool:
        return self.rng.random() < p

    def _number(self) -> str:
        n = str(int(self.rng.integers(1, 120)))
        if self._chance(0.06):
            n += " bis"
        elif self._chance(0.04):
            n += f" et {int(n) + 2}"
        return n

    def _street(self) -> str:
        return f"{self._pick('street_types')} {self._pick('streets')}"

    def _address(self, b: _Builder, adjacent_next: bool) -> None:
        spat = b.open("SPAT", 1)
        if self._chance(self.P_FT):
            b.entity("FT", 2, self._pick("feature_types"), spat)
            b.add(", ")
        if adjacent_next:
            # "r. Quincamp. pass. Beaufort." - street closed by its own dot, no number
            b.entity("LOC", 2, self._street() + ".", spat)
            b.close(spat)
            return
        b.entity("LOC", 2, self._street(), spat)
        if self._chance(self.P_SECOND_LOC):
            b.add(", angle de la ")
            b.entity("LOC", 2, self._street(), spat)
        if self._chance(self.P_CARDINAL):
            b.add(", " if self._chance(0.85) else " ")
            b.entity("CARDINAL", 2, self._number(), spat)
        b.close(spat)

    def entry(self, source_id: str) -> AnnotatedEntry:
        b = _Builder()
        if self._chance(self.P_PER):
            per = b.open("PER", 1)
            b.add(self._pick("surnames"))
            style = self.rng.random()
            if style < 0.45:
                b.add(f" ({self._pick('firstnames')})")
            elif style < 0.55:
                b.add(" frères")
            elif style < 0.65:
                b.add(" et Cie")
            elif style < 0.75:
                b.add(" je.")
            if self._chance(self.P_TITREH):
                b.add(", ")
                b.entity("TITREH", 2, self._pick("titles_person"), per)
            b.close(per)
            b.add(", ")
        if self._chance(self.P_TITRE):
            b.entity("TITRE", 1, self._pick("titles_other"))
            b.add(", ")
        u = self.rng.random()
        if u < self.P_DESC:
            desc = b.open("DESC", 1)
            b.entity("ACT", 2, self._pick("activities"), desc)
            b.add(" en tous genres" if self._chance(0.5) else " et commission")
            if self._chance(self.P_TITREP_IN_DESC):
                b.add(", ")
                b.entity("TITREP", 2, self._pick("titles_professional"), desc)
            b.close(desc)
            b.add(", ")
        elif u < self.P_DESC + self.P_ACT:
            b.entity("ACT", 1, self._pick("activities"))
            b.add(", " if self._chance(0.8) else ". ")
        if not self._chance(self.P_NO_SPAT):
            second = self._chance(self.P_SECOND_SPAT)
            adjacent = second and self._chance(0.5)
            self._address(b, adjacent)
            if second:
                b.add(" " if adjacent else ", ")
                self._address(b, False)
        b.text = b.text.rstrip(", ")
        if self._chance(0.7) and not b.text.endswith("."):
            b.add(".")
        return b.build(source_id)


def synth_generate(n: int, schema: LabelSchema, seed: int = 0, prefix: str = "syn") -> Corpus:
    """``n`` schema-valid synthetic entries, deterministic for ``seed``."""
    if n <= 0:
        raise ValueError("n must be positive")
    gen = SyntheticDirectory(seed)
    width = max(6, len(str(n)))
    entries = [gen.entry(f"{prefix}-{i:0{width}d}") for i in range(n)]
    corpus = Corpus(entries, schema.fingerprint, "synthetic")
    corpus.validate(schema)
    return corpus


def noisy_corpus_texts(corpus: Corpus, rate: float = 0.05, seed: int = 0, digit_bias: float = 4.0) -> dict[str, str]:
    return noisy_texts(corpus, NoiseConfig(rate=rate, digit_bias=digit_bias, seed=seed))

