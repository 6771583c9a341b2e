"""Entity types, the two-level Part-Of hierarchy and the label tree.

A schema lists entity types with the levels they may occur at, which
level-2 types may nest inside which level-1 types, and optional overrides
for collapsing joint labels into flat entity types.  Everything else
(authorized joint labels, joint tag vocabularies, the label tree used by the
hierarchical loss) is derived from it.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Mapping, NamedTuple

import numpy as np

OUTSIDE = "O"
IO = "IO"
IOB2 = "IOB2"
FORMATS = (IO, IOB2)

DEFAULT_SCHEMA_NAME = "paris_directories.schema"


class SchemaError(ValueError):
    """Raised for malformed schema documents or unauthorized labels."""


@dataclass(frozen=True)
class EntityType:
    name: str
    allowed_levels: frozenset[int]

    def __post_init__(self):
        if not self.name or self.name == OUTSIDE or "-" in self.name or "+" in self.name:
            raise SchemaError(f"invalid entity type name {self.name!r}")
        if not self.allowed_levels or not self.allowed_levels <= {1, 2}:
            raise SchemaError(f"type {self.name}: levels must be a non-empty subset of {{1, 2}}")


class JointLabel(NamedTuple):
    """Level-1 and level-2 class of a token, ``O`` where absent."""

    l1: str
    l2: str

    def __str__(self):
        return f"{self.l1}+{self.l2}"

    @classmethod
    def parse(cls, text: str) -> "JointLabel":
        l1, sep, l2 = text.partition("+")
        if not sep:
            raise SchemaError(f"not a joint label: {text!r}")
        return cls(l1, l2)


@dataclass(frozen=True)
class LabelSchema:
    types: tuple[EntityType, ...]
    containment: Mapping[str, frozenset[str]]
    flat_map: Mapping[str, str] = field(default_factory=dict)
    outside_symbol: str = OUTSIDE

    def __post_init__(self):
        names = [t.name for t in self.types]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise SchemaError(f"duplicate type name(s): {sorted(dup)}")
        by_name = {t.name: t for t in self.types}
        contained = set()
        for parent, children in self.containment.items():
            if parent not in by_name:
                raise SchemaError(f"containment references unknown type {parent!r}")
            if 1 not in by_name[parent].allowed_levels:
                raise SchemaError(f"containment key {parent} is not a level-1 type")
            for child in children:
                if child not in by_name:
                    raise SchemaError(f"containment references unknown type {child!r}")
                if 2 not in by_name[child].allowed_levels:
                    raise SchemaError(f"{child} nested in {parent} is not a level-2 type")
                contained.add(child)
        orphans = sorted(t.name for t in self.types if 2 in t.allowed_levels and t.name not in contained)
        if orphans:
            raise SchemaError(f"level-2 type(s) never contained: {orphans}")
        for key, value in self.flat_map.items():
            joint = JointLabel.parse(key)
            if joint not in self.authorized:
                raise SchemaError(f"flat_map key {key} is not an authorized joint label")
            if "-" in value or "+" in value:
                raise SchemaError(f"invalid flat type {value!r}")

    @cached_property
    def type_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.types)

    @cached_property
    def level1_types(self) -> tuple[str, ...]:
        return tuple(sorted(t.name for t in self.types if 1 in t.allowed_levels))

    @cached_property
    def level2_types(self) -> tuple[str, ...]:
        return tuple(sorted(t.name for t in self.types if 2 in t.allowed_levels))

    @cached_property
    def authorized(self) -> frozenset[JointLabel]:
        labels = {JointLabel(OUTSIDE, OUTSIDE)}
        for t1 in self.level1_types:
            labels.add(JointLabel(t1, OUTSIDE))
            for t2 in self.containment.get(t1, ()):
                labels.add(JointLabel(t1, t2))
        return frozenset(labels)

    def is_authorized(self, l1: str, l2: str) -> bool:
        return (l1, l2) in self.authorized

    @cached_property
    def flat_types(self) -> tuple[str, ...]:
        """Flat entity types reachable through :func:`flat_mapping`, sorted."""
        out = {flat_mapping(j, self) for j in self.authorized}
        out.discard(OUTSIDE)
        return tuple(sorted(out))

    def to_text(self) -> str:
        lines = ["[types]"]
        for t in self.types:
            lines.append(f"{t.name} = {', '.join(str(lv) for lv in sorted(t.allowed_levels))}")
        lines += ["", "[containment]"]
        for parent in sorted(self.containment):
            lines.append(f"{parent} = {', '.join(sorted(self.containment[parent]))}")
        if self.flat_map:
            lines += ["", "[flat_map]"]
            for key in sorted(self.flat_map):
                lines.append(f"{key} = {self.flat_map[key]}")
        return "\n".join(lines) + "\n"

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_schema(text: str) -> LabelSchema:
    """Parse a schema document (INI-style ``types``/``containment``/``flat_map``)."""
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",), strict=True
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise SchemaError(f"duplicate entry {exc.option!r} in [{exc.section}]") from exc
    except configparser.Error as exc:
        raise SchemaError(f"malformed schema document: {exc}") from exc
    unknown = set(parser.sections()) - {"types", "containment", "flat_map"}
    if unknown:
        raise SchemaError(f"unknown schema section(s): {sorted(unknown)}")
    if not parser.has_section("types"):
        raise SchemaError("schema document has no [types] section")

    types = []
    for name, levels in parser.items("types"):
        try:
            lv = frozenset(int(v) for v in _split_list(levels))
        except ValueError as exc:
            raise SchemaError(f"type {name}: levels must be integers") from exc
        types.append(EntityType(name, lv))

    containment = {}
    if parser.has_section("containment"):
        for parent, children in parser.items("containment"):
            containment[parent] = frozenset(_split_list(children))
    flat_map = dict(parser.items("flat_map")) if parser.has_section("flat_map") else {}
    return LabelSchema(tuple(types), containment, flat_map)


def load_schema(doc: str | os.PathLike | None = None) -> LabelSchema:
    """Load a schema from a path, from document text, or the bundled default."""
    if doc is None:
        text = resources.files("nested_tagger.data").joinpath(DEFAULT_SCHEMA_NAME).read_text("utf-8")
        return parse_schema(text)
    if isinstance(doc, os.PathLike) or ("\n" not in str(doc) and os.path.exists(str(doc))):
        with open(doc, encoding="utf-8") as fh:
            return parse_schema(fh.read())
    return parse_schema(str(doc))


def default_schema() -> LabelSchema:
    return _DEFAULT


def flat_schema(type_names: Iterable[str]) -> LabelSchema:
    """Schema with only level-1 types and no nesting (plain flat NER)."""
    return LabelSchema(tuple(EntityType(n, frozenset({1})) for n in type_names), {})


def joint_label_set(schema: LabelSchema) -> list[JointLabel]:
    return sorted(schema.authorized)


def flat_mapping(joint: JointLabel | tuple[str, str], schema: LabelSchema,
                 table: Mapping[str, str] | None = None, strict: bool = True) -> str:
    """Collapse a joint label to a flat type.

    Overrides come from ``table`` first, then the schema's ``flat_map``;
    otherwise the deepest non-O label wins.  With ``strict=False``
    unauthorized pairs (as produced by independent per-level taggers) fall
    through to the default rule instead of raising.
    """
    joint = JointLabel(*joint)
    if joint not in schema.authorized and strict:
        raise SchemaError(f"joint label {joint} is not authorized by the schema")
    key = str(joint)
    if table is not None and key in table:
        return table[key]
    if key in schema.flat_map:
        return schema.flat_map[key]
    return joint.l2 if joint.l2 != OUTSIDE else joint.l1


# --- joint tag vocabulary and label tree -----------------------------------

def _prefix_variants(joint: JointLabel, fmt: str) -> list[str]:
    l1, l2 = joint
    if l1 == OUTSIDE:
        return [f"{OUTSIDE}+{OUTSIDE}"]
    if fmt == IO:
        return [f"I-{l1}+" + (OUTSIDE if l2 == OUTSIDE else f"I-{l2}")]
    if l2 == OUTSIDE:
        return [f"B-{l1}+O", f"I-{l1}+O"]
    # a level-2 entity cannot continue into a freshly started parent, so B-x+I-y never occurs
    return [f"B-{l1}+B-{l2}", f"I-{l1}+B-{l2}", f"I-{l1}+I-{l2}"]


def joint_tags(schema: LabelSchema, fmt: str) -> list[str]:
    """Joint tag vocabulary in label-tree leaf order."""
    return build_label_tree(schema, fmt).leaves


@dataclass(frozen=True, eq=False)
class LabelTree:
    """Rooted label tree.  Node 0 is the root; leaves are listed in vocabulary order."""

    names: tuple[str, ...]
    parent: tuple[int, ...]
    leaf_nodes: tuple[int, ...]

    @cached_property
    def leaves(self) -> list[str]:
        return [self.names[i] for i in self.leaf_nodes]

    @cached_property
    def index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self.names]
        for i, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(i)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def depth(self) -> np.ndarray:
        d = np.zeros(len(self.names), dtype=np.int64)
        for i in range(1, len(self.names)):
            d[i] = d[self.parent[i]] + 1
        return d

    @cached_property
    def height(self) -> np.ndarray:
        h = np.zeros(len(self.names), dtype=np.int64)
        for i in sorted(range(len(self.names)), key=lambda k: -self.depth[k]):
            p = self.parent[i]
            if p >= 0:
                h[p] = max(h[p], h[i] + 1)
        return h

    @cached_property
    def membership(self) -> np.ndarray:
        """Boolean (n_nodes, n_leaves) matrix: leaf j lies under node i."""
        m = np.zeros((len(self.names), len(self.leaf_nodes)), dtype=bool)
        for j, leaf in enumerate(self.leaf_nodes):
            for node in self.path(leaf):
                m[node, j] = True
        return m

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_nodes)

    def node(self, name_or_index: str | int) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            if not 0 <= name_or_index < len(self.names):
                raise KeyError(name_or_index)
            return int(name_or_index)
        return self.index[name_or_index]

    def path(self, node: str | int) -> list[int]:
        """Node indices from the root down to ``node`` inclusive."""
        i = self.node(node)
        out = []
        while i >= 0:
            out.append(i)
            i = self.parent[i]
        return out[::-1]

    def lca(self, a: str | int, b: str | int) -> int:
        pa, pb = self.path(a), self.path(b)
        common = 0
        for x, y in zip(pa, pb):
            if x != y:
                break
            common = x
        return common

    def distance(self, a: str | int, b: str | int) -> int:
        ia, ib = self.node(a), self.node(b)
        top = self.lca(ia, ib)
        return int(self.depth[ia] + self.depth[ib] - 2 * self.depth[top])

    @classmethod
    def flat(cls, leaves: Iterable[str]) -> "LabelTree":
        """Depth-one tree: every leaf hangs directly off the root."""
        leaves = list(leaves)
        names = ("<root>", *leaves)
        return cls(names, (-1,) + (0,) * len(leaves), tuple(range(1, len(names))))


def build_label_tree(schema: LabelSchema, fmt: str) -> LabelTree:
    """Tree root -> level-1 class -> [joint class ->] tagged leaf.

    Under IO the joint tags themselves are the leaves of the level-1 nodes;
    under IOB2 an extra level groups the prefix variants of each joint class.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown tagging format {fmt!r}")
    by_l1: dict[str, list[JointLabel]] = {}
    for joint in joint_label_set(schema):
        by_l1.setdefault(joint.l1, []).append(joint)

    names = ["<root>"]
    parent = [-1]
    leaves = []
    for l1 in sorted(by_l1):
        names.append(f"L1:{l1}")
        parent.append(0)
        l1_node = len(names) - 1
        for joint in by_l1[l1]:
            attach = l1_node
            if fmt == IOB2:
                names.append(f"J:{joint}")
                parent.append(l1_node)
                attach = len(names) - 1
            for tag in _prefix_variants(joint, fmt):
                names.append(tag)
                parent.append(attach)
                leaves.append(len(names) - 1)
    return LabelTree(tuple(names), tuple(parent), tuple(leaves))


_DEFAULT = load_schema()
