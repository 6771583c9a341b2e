"""Nested named-entity tagging for structured historical directory entries."""

from .schema import (IO, IOB2, OUTSIDE, JointLabel, LabelSchema, LabelTree, SchemaError,
                     build_label_tree, default_schema, flat_mapping, joint_label_set, load_schema)
from .tagcodec import (FLAT, JOINT, L1, L2, AnnotatedEntry, Entity, EntryError, TagSequence, Token,
                       compose_joint, convert, decode, decompose_joint, encode, tokenize)

__version__ = "0.1.0"

__all__ = [
    "IO", "IOB2", "OUTSIDE", "JointLabel", "LabelSchema", "LabelTree", "SchemaError", "build_label_tree",
    "default_schema", "flat_mapping", "joint_label_set", "load_schema",
    "FLAT", "JOINT", "L1", "L2", "AnnotatedEntry", "Entity", "EntryError", "TagSequence", "Token",
    "compose_joint", "convert", "decode", "decompose_joint", "encode", "tokenize",
]
