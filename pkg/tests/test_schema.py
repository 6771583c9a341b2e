import itertools

import pytest

from nested_tagger.schema import (IO, IOB2, OUTSIDE, EntityType, JointLabel, LabelTree, SchemaError,
                                  build_label_tree, default_schema, flat_mapping, flat_schema, joint_label_set,
                                  joint_tags, load_schema, parse_schema)

# entity types and their levels from the directory annotation guide
EXPECTED_LEVELS = {
    "PER": {1}, "ACT": {1, 2}, "DESC": {1}, "SPAT": {1}, "TITREH": {2}, "TITREP": {2}, "TITRE": {1},
    "LOC": {2}, "CARDINAL": {2}, "FT": {2},
}
EXPECTED_CONTAINMENT = {"SPAT": {"LOC", "CARDINAL", "FT"}, "DESC": {"ACT", "TITREP"}, "PER": {"TITREH"}}


def test_default_schema_types_and_levels(schema):
    assert {t.name: set(t.allowed_levels) for t in schema.types} == EXPECTED_LEVELS
    assert {k: set(v) for k, v in schema.containment.items()} == EXPECTED_CONTAINMENT


def test_joint_label_set_matches_definition(schema):
    expected = {JointLabel(OUTSIDE, OUTSIDE)}
    for t in schema.types:
        if 1 in t.allowed_levels:
            expected.add(JointLabel(t.name, OUTSIDE))
    for parent, kids in EXPECTED_CONTAINMENT.items():
        expected |= {JointLabel(parent, k) for k in kids}
    assert set(joint_label_set(schema)) == expected
    assert joint_label_set(schema) == sorted(expected)


def test_no_level2_label_outside_level1(schema):
    for joint in schema.authorized:
        assert not (joint.l1 == OUTSIDE and joint.l2 != OUTSIDE)
    assert not schema.is_authorized(OUTSIDE, "LOC")
    assert not schema.is_authorized("ACT", "LOC")
    assert schema.is_authorized("SPAT", "LOC")


def test_joint_tag_counts(schema):
    # IO: one tag per joint class.  IOB2: O+O, B/I for (t, O), and B+B, I+B, I+I per nested pair.
    n_l1 = len(schema.level1_types)
    n_pairs = sum(len(v) for v in EXPECTED_CONTAINMENT.values())
    assert len(joint_tags(schema, IO)) == 1 + n_l1 + n_pairs == 12
    assert len(joint_tags(schema, IOB2)) == 1 + 2 * n_l1 + 3 * n_pairs == 29
    assert not any(t.startswith("B-") and "+I-" in t for t in joint_tags(schema, IOB2))


@pytest.mark.parametrize("fmt, depth", [(IO, 2), (IOB2, 3)])
def test_label_tree_shape(schema, fmt, depth):
    tree = build_label_tree(schema, fmt)
    assert tree.leaves == joint_tags(schema, fmt)
    assert len(set(tree.leaves)) == tree.n_leaves
    for leaf in tree.leaf_nodes:
        path = tree.path(leaf)
        assert path[0] == 0 and len(path) == depth + 1
        assert tree.height[leaf] == 0
        l1 = tree.names[leaf].split("+")[0]
        expected_l1 = OUTSIDE if l1 == OUTSIDE else l1.split("-", 1)[1]
        assert tree.names[path[1]] == f"L1:{expected_l1}"
    assert tree.height[0] == depth
    assert tree.membership[0].all()


def test_label_tree_distance_groups_by_level1(schema):
    tree = build_label_tree(schema, IO)
    assert tree.distance("I-SPAT+I-LOC", "I-SPAT+I-FT") == 2
    assert tree.distance("I-SPAT+I-LOC", "I-DESC+O") == 4
    assert tree.lca("I-SPAT+I-LOC", "I-SPAT+O") == tree.node("L1:SPAT")


def test_flat_tree():
    tree = LabelTree.flat(["a", "b", "c"])
    assert tree.leaves == ["a", "b", "c"]
    assert list(tree.depth) == [0, 1, 1, 1]


def test_flat_mapping_default_rule(schema):
    assert flat_mapping(("SPAT", "LOC"), schema) == "LOC"
    assert flat_mapping(("PER", "O"), schema) == "PER"
    assert flat_mapping(("O", "O"), schema) == "O"
    with pytest.raises(SchemaError):
        flat_mapping(("ACT", "LOC"), schema)
    assert flat_mapping(("ACT", "LOC"), schema, strict=False) == "LOC"
    assert flat_mapping(("SPAT", "O"), schema, {"SPAT+O": "O"}) == "O"


def test_flat_map_section_overrides():
    text = default_schema().to_text() + "\n[flat_map]\nSPAT+O = O\n"
    s = parse_schema(text)
    assert flat_mapping(("SPAT", "O"), s) == "O"
    assert "SPAT" not in s.flat_types


def test_text_round_trip_and_fingerprint(schema):
    again = parse_schema(schema.to_text())
    assert again.to_text() == schema.to_text()
    assert again.fingerprint == schema.fingerprint
    assert parse_schema(schema.to_text().replace("FT", "FX")).fingerprint != schema.fingerprint


def test_load_schema_from_path(tmp_path, schema):
    p = tmp_path / "s.schema"
    p.write_text(schema.to_text())
    assert load_schema(p).fingerprint == schema.fingerprint
    assert load_schema().fingerprint == schema.fingerprint


@pytest.mark.parametrize("text, message", [
    ("[types]\nA = 1\nA = 1\n", "duplicate"),
    ("[types]\nA = 1\nB = 2\n[containment]\nA = C\n", "unknown"),
    ("[types]\nA = 1\nB = 2\n", "never contained"),
    ("[types]\nA = 3\n", "levels"),
    ("[types]\nA = 1\nB = 2\n[containment]\nB = A\n", "level-1"),
])
def test_invalid_schemas(text, message):
    with pytest.raises(SchemaError, match=message):
        parse_schema(text)


def test_bad_type_names():
    for name in ("", "O", "A-B", "A+B"):
        with pytest.raises(SchemaError):
            EntityType(name, frozenset({1}))


def test_flat_schema_has_no_nesting():
    s = flat_schema(["PER", "LOC"])
    assert s.level2_types == ()
    assert set(joint_label_set(s)) == {JointLabel("O", "O"), JointLabel("PER", "O"), JointLabel("LOC", "O")}


def test_joint_label_parse_and_str():
    j = JointLabel.parse("SPAT+LOC")
    assert j == ("SPAT", "LOC") and str(j) == "SPAT+LOC"
    with pytest.raises(SchemaError):
        JointLabel.parse("SPAT")


def test_all_pairs_authorization_is_exact(schema):
    names = [OUTSIDE, *schema.type_names]
    for a, b in itertools.product(names, names):
        expected = (a, b) == (OUTSIDE, OUTSIDE) or (
            a != OUTSIDE and 1 in next(t for t in schema.types if t.name == a).allowed_levels
            and (b == OUTSIDE or b in EXPECTED_CONTAINMENT.get(a, ())))
        assert schema.is_authorized(a, b) == expected, (a, b)
