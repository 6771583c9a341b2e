"""Span annotations <-> per-token IO/IOB2 tag sequences.

Tag strings follow ``PREFIX-TYPE`` (``I-PER``, ``B-LOC``, ``O``); joint tags
concatenate the level-1 and level-2 tag with ``+`` (``I-SPAT+B-CARDINAL``,
``O+O``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .schema import FORMATS, IO, IOB2, OUTSIDE, JointLabel, LabelSchema, flat_mapping, joint_tags

L1, L2, JOINT, FLAT = "L1", "L2", "JOINT", "FLAT"
MODES = (L1, L2, JOINT, FLAT)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class EntryError(ValueError):
    """An annotated entry violates its structural or schema invariants."""


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int

    @property
    def char_span(self) -> tuple[int, int]:
        return self.start, self.end


@dataclass(frozen=True, order=True)
class Entity:
    """Entity over token span ``[start, end)``; ``parent`` indexes the entry's entity list."""

    start: int
    end: int
    level: int
    etype: str
    parent: int | None = None

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end


def tokenize(text: str) -> tuple[Token, ...]:
    """Whitespace split with every punctuation character as its own token."""
    return tuple(Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text))


def canonical_entities(entities: Iterable[Entity]) -> tuple[Entity, ...]:
    """Sort by (start, level, end, type) and remap parent indices accordingly."""
    entities = list(entities)
    order = sorted(range(len(entities)), key=lambda i: (entities[i].start, entities[i].level,
                                                        entities[i].end, entities[i].etype))
    new_pos = {old: new for new, old in enumerate(order)}
    out = []
    for old in order:
        e = entities[old]
        parent = None if e.parent is None else new_pos[e.parent]
        out.append(Entity(e.start, e.end, e.level, e.etype, parent))
    return tuple(out)


@dataclass(frozen=True)
class AnnotatedEntry:
    text: str
    tokens: tuple[Token, ...]
    entities: tuple[Entity, ...]
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if any(e.parent is not None and not 0 <= e.parent < len(self.entities) for e in self.entities):
            raise EntryError(f"{self.source_id}: dangling parent index")
        object.__setattr__(self, "entities", canonical_entities(self.entities))
        self._check_structure()

    def _check_structure(self):
        prev_end = 0
        for tok in self.tokens:
            if tok.end <= tok.start or tok.start < prev_end or tok.end > len(self.text):
                raise EntryError(f"{self.source_id}: bad token span {tok.char_span}")
            prev_end = tok.end
        n = len(self.tokens)
        last_end = {1: 0, 2: 0}
        for e in self.entities:
            if e.level not in (1, 2):
                raise EntryError(f"{self.source_id}: entity level must be 1 or 2")
            if not 0 <= e.start < e.end <= n:
                raise EntryError(f"{self.source_id}: entity span {e.span} outside [0, {n})")
            if e.start < last_end[e.level]:
                raise EntryError(f"{self.source_id}: overlapping level-{e.level} entities")
            last_end[e.level] = e.end
            if e.level == 1 and e.parent is not None:
                raise EntryError(f"{self.source_id}: level-1 entity with a parent")
            if e.level == 2:
                if e.parent is None:
                    raise EntryError(f"{self.source_id}: level-2 entity without parent")
                p = self.entities[e.parent]
                if p.level != 1 or not (p.start <= e.start and e.end <= p.end):
                    raise EntryError(f"{self.source_id}: level-2 entity {e.span} not inside its parent")

    @classmethod
    def from_text(cls, text: str, entities: Iterable[Entity] = (), source_id: str = "") -> "AnnotatedEntry":
        return cls(text, tokenize(text), tuple(entities), source_id)

    def level(self, level: int) -> list[Entity]:
        return [e for e in self.entities if e.level == level]

    def parent_of(self, entity: Entity) -> Entity | None:
        return None if entity.parent is None else self.entities[entity.parent]

    def with_entities(self, entities: Iterable[Entity]) -> "AnnotatedEntry":
        return AnnotatedEntry(self.text, self.tokens, tuple(entities), self.source_id)


def validate_entry(entry: AnnotatedEntry, schema: LabelSchema) -> None:
    """Raise :class:`EntryError` unless every entity type/level and nesting pair is allowed."""
    allowed = {t.name: t.allowed_levels for t in schema.types}
    for e in entry.entities:
        if e.level not in allowed.get(e.etype, ()):
            raise EntryError(f"{entry.source_id}: {e.etype} not allowed at level {e.level}")
        if e.level == 2:
            parent = entry.entities[e.parent]
            if not schema.is_authorized(parent.etype, e.etype):
                raise EntryError(f"{entry.source_id}: {e.etype} may not nest inside {parent.etype}")


@dataclass(frozen=True)
class TagSequence:
    format: str
    mode: str
    tags: tuple[str, ...]

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"unknown tagging format {self.format!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown tag mode {self.mode!r}")
        object.__setattr__(self, "tags", tuple(self.tags))

    def __len__(self):
        return len(self.tags)


def split_tag(tag: str) -> tuple[str, str | None]:
    """``"B-LOC"`` -> ``("B", "LOC")``; ``"O"`` -> ``("O", None)``."""
    if tag == OUTSIDE:
        return OUTSIDE, None
    prefix, sep, etype = tag.partition("-")
    if not sep or prefix not in ("B", "I") or not etype:
        raise ValueError(f"malformed tag {tag!r}")
    return prefix, etype


def tag_vocabulary(schema: LabelSchema, fmt: str, mode: str) -> list[str]:
    """Tags a tagger head emits for ``(schema, format, mode)``."""
    if mode == JOINT:
        return joint_tags(schema, fmt)
    if mode == L1:
        types = schema.level1_types
    elif mode == L2:
        types = schema.level2_types
    elif mode == FLAT:
        types = schema.flat_types
    else:
        raise ValueError(f"unknown tag mode {mode!r}")
    prefixes = ("I",) if fmt == IO else ("B", "I")
    return [OUTSIDE] + [f"{p}-{t}" for t in types for p in prefixes]


# --- chunking ---------------------------------------------------------------

def chunk(tags: Sequence[str]) -> list[tuple[str, int, int]]:
    """Group tags into ``(type, start, end)`` runs.

    ``B-X`` always opens a new entity; ``I-X`` continues an open ``X`` entity
    and otherwise opens one (malformed IOB2 is repaired, never rejected).
    Under IO this merges maximal runs of the same class.
    """
    out = []
    cur_type, cur_start = None, 0
    for i, tag in enumerate(tags):
        prefix, etype = split_tag(tag)
        if cur_type is not None and (prefix != "I" or etype != cur_type):
            out.append((cur_type, cur_start, i))
            cur_type = None
        if etype is not None and cur_type is None:
            cur_type, cur_start = etype, i
    if cur_type is not None:
        out.append((cur_type, cur_start, len(tags)))
    return out


def level_tags(spans: Iterable[tuple[str, int, int]], n: int, fmt: str) -> list[str]:
    tags = [OUTSIDE] * n
    for etype, start, end in spans:
        for i in range(start, end):
            tags[i] = f"I-{etype}"
        if fmt == IOB2:
            tags[start] = f"B-{etype}"
    return tags


def compose_tags(l1_tags: Sequence[str], l2_tags: Sequence[str]) -> list[str]:
    return [f"{a}+{b}" for a, b in zip(l1_tags, l2_tags)]


def flatten_entities(entities: Sequence[Entity], schema: LabelSchema,
                     table: dict[str, str] | None = None) -> list[tuple[str, int, int]]:
    """Flat ``(type, start, end)`` entities derived from a nested annotation.

    Each level-2 entity maps to ``flat(parent, child)``; stretches of a
    level-1 entity not covered by any child map to ``flat(parent, O)``.
    Pieces whose flat type is ``O`` disappear.
    """
    out = []
    children: dict[int, list[Entity]] = {}
    for e in entities:
        if e.level == 2:
            children.setdefault(e.parent, []).append(e)
    for idx, e in enumerate(entities):
        if e.level != 1:
            continue
        pos = e.start
        for child in sorted(children.get(idx, ()), key=lambda c: c.start):
            if child.start > pos:
                out.append((flat_mapping((e.etype, OUTSIDE), schema, table, strict=False), pos, child.start))
            out.append((flat_mapping((e.etype, child.etype), schema, table, strict=False),
                        child.start, child.end))
            pos = child.end
        if pos < e.end:
            out.append((flat_mapping((e.etype, OUTSIDE), schema, table, strict=False), pos, e.end))
    return [piece for piece in out if piece[0] != OUTSIDE]


def encode_entities(entities: Sequence[Entity], n_tokens: int, fmt: str, mode: str,
                    schema: LabelSchema | None = None) -> TagSequence:
    """Encode a canonical entity list (no schema checks; ``schema`` needed for FLAT only)."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown tagging format {fmt!r}")
    spans = {lv: [(e.etype, e.start, e.end) for e in entities if e.level == lv] for lv in (1, 2)}
    if mode == L1:
        tags = level_tags(spans[1], n_tokens, fmt)
    elif mode == L2:
        tags = level_tags(spans[2], n_tokens, fmt)
    elif mode == JOINT:
        tags = compose_tags(level_tags(spans[1], n_tokens, fmt), level_tags(spans[2], n_tokens, fmt))
    elif mode == FLAT:
        if schema is None:
            raise ValueError("FLAT mode needs a schema for the flat mapping")
        tags = level_tags(flatten_entities(entities, schema), n_tokens, fmt)
    else:
        raise ValueError(f"unknown tag mode {mode!r}")
    return TagSequence(fmt, mode, tags)


def encode(entry: AnnotatedEntry, fmt: str, mode: str, schema: LabelSchema, check: bool = True) -> TagSequence:
    """Tag sequence for ``entry``; refuses entries the schema does not authorize."""
    if check:
        validate_entry(entry, schema)
    return encode_entities(entry.entities, len(entry.tokens), fmt, mode, schema)


def decode(tags: TagSequence, schema: LabelSchema | None = None) -> list[Entity]:
    """Entities encoded by ``tags`` in canonical order.

    JOINT mode rebuilds both levels: level-2 tags are chunked separately
    inside each level-1 entity, so a level-2 run crossing a level-1 boundary
    is cut there and level-2 tags outside every level-1 entity are dropped.
    L2 mode yields parentless level-2 entities (the level-1 context is not
    in the tags).  ``schema`` is accepted for symmetry with :func:`encode`.
    """
    if tags.mode in (L1, FLAT):
        return [Entity(s, e, 1, t) for t, s, e in chunk(tags.tags)]
    if tags.mode == L2:
        return [Entity(s, e, 2, t, None) for t, s, e in chunk(tags.tags)]
    l1_tags, l2_tags = _split_joint(tags.tags)
    out: list[Entity] = []
    for t1, s1, e1 in chunk(l1_tags):
        out.append(Entity(s1, e1, 1, t1))
        parent = len(out) - 1
        for t2, s2, e2 in chunk(l2_tags[s1:e1]):
            out.append(Entity(s1 + s2, s1 + e2, 2, t2, parent))
    return out


def decode_entry(template: AnnotatedEntry, tags: TagSequence) -> AnnotatedEntry:
    """``template`` with its entities replaced by those decoded from ``tags``."""
    if len(tags) != len(template.tokens):
        raise ValueError(f"{template.source_id}: {len(tags)} tags for {len(template.tokens)} tokens")
    if tags.mode not in (JOINT, L1):
        raise ValueError("only JOINT or L1 tag sequences decode to a full entry")
    return template.with_entities(decode(tags))


def convert(tags: TagSequence, to: str, schema: LabelSchema | None = None) -> TagSequence:
    """Re-encode through the span domain: ``encode(decode(tags), to)``."""
    if tags.mode == FLAT:
        return TagSequence(to, FLAT, level_tags(chunk(tags.tags), len(tags), to))
    return encode_entities(decode(tags), len(tags), to, tags.mode, schema)


def _split_joint(tags: Iterable[str]) -> tuple[list[str], list[str]]:
    l1, l2 = [], []
    for tag in tags:
        a, sep, b = tag.partition("+")
        if not sep:
            raise ValueError(f"not a joint tag: {tag!r}")
        l1.append(a)
        l2.append(b)
    return l1, l2


def compose_joint(l1_tags: TagSequence, l2_tags: TagSequence) -> TagSequence:
    if len(l1_tags) != len(l2_tags):
        raise ValueError(f"length mismatch: {len(l1_tags)} vs {len(l2_tags)}")
    if l1_tags.format != l2_tags.format:
        raise ValueError(f"format mismatch: {l1_tags.format} vs {l2_tags.format}")
    return TagSequence(l1_tags.format, JOINT, compose_tags(l1_tags.tags, l2_tags.tags))


def decompose_joint(joint: TagSequence) -> tuple[TagSequence, TagSequence]:
    if joint.mode != JOINT:
        raise ValueError("decompose_joint expects a JOINT tag sequence")
    l1, l2 = _split_joint(joint.tags)
    return TagSequence(joint.format, L1, l1), TagSequence(joint.format, L2, l2)


def joint_class(tag: str) -> JointLabel:
    """Prefix-stripped class of a joint tag: ``I-SPAT+B-LOC`` -> ``SPAT+LOC``."""
    a, _, b = tag.partition("+")
    return JointLabel(split_tag(a)[1] or OUTSIDE, split_tag(b)[1] or OUTSIDE)
