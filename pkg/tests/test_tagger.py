from dataclasses import replace

import numpy as np
import pytest

from nested_tagger import _kernels
from nested_tagger.corpus import split, synth_generate
from nested_tagger.features import FeatureHasher, char_ngrams, word_shape
from nested_tagger.metrics import hierarchy_violations
from nested_tagger.schema import IO, IOB2, default_schema, flat_schema
from nested_tagger.tagcodec import FLAT, JOINT, AnnotatedEntry, Entity, decode, tag_vocabulary
from nested_tagger.tagger import (M1, M2, M3, FLAT_STRATEGY, TrainConfig, TrainingError, dumps_model, head_logits,
                                  load_model, loads_model, predict, predict_corpus, predict_tags, save_model, train,
                                  _featurize)

FAST = TrainConfig(max_steps=300, eval_every=50, patience=3)


@pytest.fixture(scope="module")
def data():
    schema = default_schema()
    tr, dv, te = split(synth_generate(150, schema, seed=11))
    return schema, tr.entries, dv.entries, te.entries


@pytest.fixture(scope="module")
def models(data):
    schema, tr, dv, _ = data
    return {s: train(tr, dv, s, IOB2, schema, FAST) for s in (M1, M2, M3, FLAT_STRATEGY)}


def test_head_layout(models, data):
    schema = data[0]
    assert [h.mode for h in models[M1].heads] == ["L1", "L2"]
    assert [h.mode for h in models[M2].heads] == [JOINT]
    assert [h.mode for h in models[FLAT_STRATEGY].heads] == [FLAT]
    for m in models.values():
        for h in m.heads:
            assert h.vocab == tag_vocabulary(schema, IOB2, h.mode)
            assert h.weights.shape == (FAST.n_features, len(h.vocab)) and h.bias.shape == (len(h.vocab),)
    m1 = models[M1]
    assert m1.n_parameters == sum(h.weights.size + h.bias.size for h in m1.heads)


def test_predictions_are_well_formed(models, data):
    schema, _, _, te = data
    for strategy, m in models.items():
        tags = predict_tags(m, te)
        vocab = set(tag_vocabulary(schema, IOB2, FLAT if strategy == FLAT_STRATEGY else JOINT))
        for entry, seq in zip(te, tags):
            assert len(seq) == len(entry.tokens)
            if strategy != M1:
                assert set(seq.tags) <= vocab
    single = predict(models[M2], ["Dufour"])
    assert len(single) == 1 and single.tags[0] in tag_vocabulary(schema, IOB2, JOINT)


def test_joint_models_never_violate_hierarchy(models, data):
    schema, _, _, te = data
    for s in (M2, M3):
        assert hierarchy_violations(predict_corpus(models[s], te), schema)[0] == 0


def test_m1_may_compose_unauthorized_pairs(data):
    # independent heads: force the level-1 head to say ACT and the level-2 head to say LOC
    schema, tr, dv, _ = data
    m = train(tr[:20], dv[:5], M1, IO, schema, replace(FAST, max_steps=1, eval_every=1))
    l1, l2 = m.heads
    l1.bias[:] = 0
    l1.bias[l1.vocab.index("I-ACT")] = 1e6
    l2.bias[:] = 0
    l2.bias[l2.vocab.index("I-LOC")] = 1e6
    entry = AnnotatedEntry.from_text("a b", [], "x")
    pred = predict_corpus(m, [entry])
    assert pred[0].entities == (Entity(0, 2, 1, "ACT"), Entity(0, 2, 2, "LOC", 0))
    assert hierarchy_violations(pred, schema)[0] == 1


def test_argmax_invariance_to_logit_shift(models, data):
    _, _, _, te = data
    m = models[M2]
    before = predict_tags(m, te)
    m2 = loads_model(dumps_model(m))
    m2.heads[0].bias += 123.0
    assert predict_tags(m2, te) == before


def test_training_is_reproducible(data):
    schema, tr, dv, _ = data
    a = train(tr, dv, M2, IO, schema, FAST)
    b = train(tr, dv, M2, IO, schema, FAST)
    assert dumps_model(a) == dumps_model(b)
    c = train(tr, dv, M2, IO, schema, replace(FAST, seed=1))
    assert dumps_model(a) != dumps_model(c)


def test_hxe_on_flat_schema_follows_ce_exactly():
    schema = flat_schema(["PER", "LOC"])
    ents = []
    for i in range(40):
        words = ["Dufour", ",", "r", ".", "Vaugirard", ",", str(i)]
        ents.append(AnnotatedEntry.from_text(" ".join(words), [Entity(0, 1, 1, "PER"), Entity(2, 5, 1, "LOC")],
                                             f"e{i}"))
    cfg = replace(FAST, hxe_alpha=0.0, max_steps=120, eval_every=20)
    m2 = train(ents[:30], ents[30:], M2, IOB2, schema, cfg)
    m3 = train(ents[:30], ents[30:], M3, IOB2, schema, cfg)
    assert m2.history == m3.history
    for a, b in zip(m2.heads, m3.heads):
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_loss_decreases_on_toy_corpus():
    schema = default_schema()
    corpus = synth_generate(50, schema, seed=0).entries
    cfg = TrainConfig(max_steps=400, eval_every=40, patience=100, seed=0)
    m = train(corpus, corpus[:10], M2, IOB2, schema, cfg)
    losses = [h["train_loss"] for h in m.history][:10]
    assert len(losses) == 10
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_early_stopping_keeps_best(data):
    schema, tr, dv, _ = data
    cfg = replace(FAST, max_steps=600, eval_every=25, patience=2)
    m = train(tr, dv, M2, IOB2, schema, cfg)
    f1s = [h["dev_f1"] for h in m.history]
    assert max(f1s) >= f1s[-1]
    # re-score the returned weights on dev: they are the best evaluation seen
    from nested_tagger.metrics import prf_from_items
    from nested_tagger.tagcodec import encode
    tags = predict_tags(m, dv)
    gold = [(n, e.level, e.etype, e.start, e.end) for n, x in enumerate(dv) for e in decode(encode(x, IOB2, JOINT,
                                                                                                   schema))]
    pred = [(n, e.level, e.etype, e.start, e.end) for n, t in enumerate(tags) for e in decode(t)]
    assert prf_from_items(gold, pred).f1 == pytest.approx(max(f1s))


def test_model_file_round_trip(tmp_path, models, data):
    schema, _, _, te = data
    for m in models.values():
        path = tmp_path / "m.model"
        save_model(m, path)
        back = load_model(path, schema)
        assert dumps_model(back) == dumps_model(m)
        assert predict_tags(back, te) == predict_tags(m, te)
    with pytest.raises(ValueError):
        load_model(path, flat_schema(["PER"]))
    with pytest.raises(ValueError):
        loads_model(b"garbage")


def test_training_errors(data):
    schema, tr, dv, _ = data
    with pytest.raises(TrainingError):
        train([], dv, M2, IO, schema, FAST)
    with pytest.raises(TrainingError):
        train(tr, [], M2, IO, schema, FAST)
    with pytest.raises(ValueError):
        train(tr, dv, "M9", IO, schema, FAST)
    with pytest.raises(TrainingError):
        train(tr, dv, M2, IO, flat_schema(["PER"]), FAST)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(loss_reduction="max")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lr": 1})
    p = tmp_path / "c.json"
    p.write_text('{"learning_rate": 0.001, "seed": 4}')
    cfg = TrainConfig.load(p)
    assert cfg.learning_rate == 0.001 and cfg.seed == 4 and cfg.batch_size == 16
    assert TrainConfig() == TrainConfig(1e-4, 1e-5, 16, 5000, 5, 100, 0)


@pytest.mark.skipif(_kernels.NUMBA is None, reason="numba not installed")
def test_backends_train_the_same_model(data):
    schema, tr, dv, _ = data
    cfg = replace(FAST, max_steps=100)
    a = train(tr, dv, M3, IOB2, schema, replace(cfg, hxe_alpha=0.5), kernels=_kernels.NUMBA)
    b = train(tr, dv, M3, IOB2, schema, replace(cfg, hxe_alpha=0.5), kernels=_kernels.NUMPY)
    for ha, hb in zip(a.heads, b.heads):
        assert np.allclose(ha.weights, hb.weights, atol=1e-10)
    assert [h["dev_f1"] for h in a.history] == [h["dev_f1"] for h in b.history]


def test_feature_hashing():
    assert word_shape("Vaugirard") == "Xx" and word_shape("14") == "d" and word_shape("d'") == "x'"
    assert char_ngrams("ab", 2, 3) == ["<a", "ab", "b>", "<ab", "ab>"]
    h = FeatureHasher(n_features=1 << 10, seed=3)
    ip, ix, off = h.featurize([["Dufour", ",", "7"], ["r"]])
    assert list(off) == [0, 3, 4] and len(ip) == 5
    assert ix.min() >= 0 and ix.max() < 1 << 10
    ip2, ix2, _ = FeatureHasher(n_features=1 << 10, seed=3).featurize([["Dufour", ",", "7"], ["r"]])
    assert np.array_equal(ip, ip2) and np.array_equal(ix, ix2)
    assert not np.array_equal(ix, FeatureHasher(n_features=1 << 10, seed=4).featurize([["Dufour", ",", "7"],
                                                                                          ["r"]])[1])


def test_logits_shape(models, data):
    m = models[M2]
    feats = _featurize(m.hasher, data[3])
    assert head_logits(m, m.heads[0], feats).shape == (feats.offsets[-1], len(m.heads[0].vocab))
