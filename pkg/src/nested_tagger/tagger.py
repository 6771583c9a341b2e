"""Hashed-feature linear token tagger and the nested-NER strategies built on it.

Strategies:

``M1``   two independent heads, one per entity level; predictions are merged
         by composing the level tags (no hierarchy constraint)
``M2``   one head over joint labels, categorical cross-entropy
``M3``   one head over joint labels, hierarchical cross-entropy on the label tree
``FLAT`` one head over flat entity types (baseline)

Heads are linear maps from hashed sparse features to tag logits trained by
mini-batch SGD with decoupled weight decay and early stopping on dev F1.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import _kernels
from .features import FeatureHasher
from .hxe import HxeConfig, ce_loss_grad_batch, hxe_loss_grad_batch
from .metrics import prf_from_items
from .schema import IO, IOB2, LabelSchema, build_label_tree
from .tagcodec import (FLAT, JOINT, L1, L2, AnnotatedEntry, EntryError, TagSequence, Token, chunk, compose_joint,
                       decode, encode, tag_vocabulary)

M1, M2, M3, FLAT_STRATEGY = "M1", "M2", "M3", "FLAT"
STRATEGIES = (M1, M2, M3, FLAT_STRATEGY)
HEAD_MODES = {M1: (L1, L2), M2: (JOINT,), M3: (JOINT,), FLAT_STRATEGY: (FLAT,)}

MODEL_MAGIC = b"NTAGMODEL"
MODEL_VERSION = 1


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 16
    max_steps: int = 5000
    patience: int = 5
    eval_every: int = 100
    seed: int = 0
    hxe_alpha: float = 0.0
    hxe_epsilon: float = 1e-12
    n_features: int = 1 << 16
    loss_reduction: str = "sum"

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_steps", "patience", "eval_every", "n_features"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError("loss_reduction must be 'sum' or 'mean'")
        HxeConfig(self.hxe_alpha, self.hxe_epsilon)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Head:
    mode: str
    vocab: list[str]
    weights: np.ndarray
    bias: np.ndarray


@dataclass
class Model:
    strategy: str
    format: str
    heads: list[Head]
    schema_fingerprint: str
    hasher: FeatureHasher
    config: TrainConfig
    history: list[dict] = field(default_factory=list)

    @property
    def n_parameters(self) -> int:
        return sum(h.weights.size + h.bias.size for h in self.heads)


# --- data preparation -------------------------------------------------------------

@dataclass
class _Features:
    indptr: np.ndarray
    indices: np.ndarray
    offsets: np.ndarray

    def tokens_of(self, entry_ids: np.ndarray) -> np.ndarray:
        return np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in entry_ids])


def _featurize(hasher: FeatureHasher, entries: Sequence[AnnotatedEntry]) -> _Features:
    return _Features(*hasher.featurize([[t.text for t in e.tokens] for e in entries]))


def _gold_indices(entries, vocab, fmt, mode, schema) -> np.ndarray:
    pos = {t: i for i, t in enumerate(vocab)}
    out = []
    for e in entries:
        for tag in encode(e, fmt, mode, schema).tags:
            if tag not in pos:
                raise TrainingError(f"{e.source_id}: tag {tag!r} not in the {mode} vocabulary")
            out.append(pos[tag])
    return np.array(out, dtype=np.int64)


def _items(tags: Sequence[str], mode: str) -> list[tuple]:
    if mode == JOINT:
        return [(e.level, e.etype, e.start, e.end) for e in decode(TagSequence(IOB2, JOINT, tags))]
    return list(chunk(tags))


def _split_rows(values: np.ndarray, offsets: np.ndarray) -> list[np.ndarray]:
    return [values[offsets[i]:offsets[i + 1]] for i in range(len(offsets) - 1)]


# --- training ---------------------------------------------------------------------

def _loss_fn(strategy: str, schema: LabelSchema, fmt: str, cfg: TrainConfig, kernels):
    if strategy == M3:
        tree = build_label_tree(schema, fmt)
        hcfg = HxeConfig(cfg.hxe_alpha, cfg.hxe_epsilon)
        return lambda z, y: hxe_loss_grad_batch(z, y, tree, hcfg, kernels)
    return lambda z, y: ce_loss_grad_batch(z, y, cfg.hxe_epsilon, kernels)


def _train_head(mode, vocab, train_feats, train_gold, dev_feats, dev_gold_items, loss_fn, cfg, head_seed,
                kernels, log):
    k = kernels
    n_entries = len(train_feats.offsets) - 1
    n_cls = len(vocab)
    weights = np.zeros((cfg.n_features, n_cls))
    bias = np.zeros(n_cls)
    scale = 1.0
    decay = 1.0 - cfg.learning_rate * cfg.weight_decay
    rng = np.random.default_rng(head_seed)
    order = rng.permutation(n_entries)
    cursor = 0
    dev_tok = np.arange(dev_feats.offsets[-1], dtype=np.int64)

    best = (-1.0, 0, weights.copy(), bias.copy())
    bad_evals = 0
    loss_acc, tok_acc = 0.0, 0
    history = []

    def evaluate():
        logits = k.sparse_logits(dev_feats.indptr, dev_feats.indices, dev_tok, weights, bias, scale)
        pred = np.argmax(logits, axis=1)
        tags = [[vocab[i] for i in row] for row in _split_rows(pred, dev_feats.offsets)]
        prf = prf_from_items(
            [(n, *it) for n, items in enumerate(dev_gold_items) for it in items],
            [(n, *it) for n, t in enumerate(tags) for it in _items(t, mode)],
        )
        return prf.f1

    for step in range(1, cfg.max_steps + 1):
        if cursor >= n_entries:
            order = rng.permutation(n_entries)
            cursor = 0
        batch = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        tok = train_feats.tokens_of(batch)
        logits = k.sparse_logits(train_feats.indptr, train_feats.indices, tok, weights, bias, scale)
        loss, grad = loss_fn(logits, train_gold[tok])
        if cfg.loss_reduction == "mean":
            grad /= len(tok)
        k.sparse_update(train_feats.indptr, train_feats.indices, tok, weights, grad, cfg.learning_rate / scale)
        bias -= cfg.learning_rate * grad.sum(axis=0)
        scale *= decay
        if scale < 1e-6:
            weights *= scale
            scale = 1.0
        loss_acc += loss
        tok_acc += len(tok)

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            f1 = evaluate()
            history.append({"head": mode, "step": step, "train_loss": loss_acc / max(tok_acc, 1), "dev_f1": f1})
            if log:
                log(f"[{mode}] step {step:5d}  loss {loss_acc / max(tok_acc, 1):.4f}  dev F1 {f1:.4f}")
            loss_acc, tok_acc = 0.0, 0
            if f1 > best[0]:
                best = (f1, step, weights * scale, bias.copy())
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= cfg.patience:
                    break
    return Head(mode, list(vocab), best[2], best[3]), history, best[1]


def train(corpus: Sequence[AnnotatedEntry], dev_corpus: Sequence[AnnotatedEntry], strategy: str, fmt: str,
          schema: LabelSchema, cfg: TrainConfig = TrainConfig(), kernels=None, log=None,
          hasher: FeatureHasher | None = None) -> Model:
    """Train a tagger for ``strategy``; returns the best-on-dev weights per head."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if fmt not in (IO, IOB2):
        raise ValueError(f"unknown tagging format {fmt!r}")
    corpus, dev_corpus = list(corpus), list(dev_corpus)
    if not corpus:
        raise TrainingError("empty training corpus")
    if not dev_corpus:
        raise TrainingError("empty dev corpus")
    kernels = kernels or _kernels.BACKEND
    hasher = hasher or FeatureHasher(cfg.n_features, seed=0)
    if hasher.n_features != cfg.n_features:
        raise ValueError("hasher and config disagree on n_features")
    train_feats = _featurize(hasher, corpus)
    dev_feats = _featurize(hasher, dev_corpus)
    loss_fn = _loss_fn(strategy, schema, fmt, cfg, kernels)

    heads, history = [], []
    for h, mode in enumerate(HEAD_MODES[strategy]):
        vocab = tag_vocabulary(schema, fmt, mode)
        try:
            gold = _gold_indices(corpus, vocab, fmt, mode, schema)
            dev_items = [_items(encode(e, fmt, mode, schema).tags, mode) for e in dev_corpus]
        except EntryError as exc:
            raise TrainingError(f"corpus does not fit the schema: {exc}") from None
        head_seed = np.random.SeedSequence([cfg.seed, h])
        head, hist, _ = _train_head(mode, vocab, train_feats, gold, dev_feats, dev_items, loss_fn, cfg,
                                    head_seed, kernels, log)
        heads.append(head)
        history += hist
    return Model(strategy, fmt, heads, schema.fingerprint, hasher, cfg, history)


# --- prediction -------------------------------------------------------------------

def head_logits(model: Model, head: Head, feats: _Features, kernels=None) -> np.ndarray:
    k = kernels or _kernels.BACKEND
    tok = np.arange(feats.offsets[-1], dtype=np.int64)
    return k.sparse_logits(feats.indptr, feats.indices, tok, head.weights, head.bias, 1.0)


def _tag_rows(model: Model, feats: _Features, kernels=None) -> list[list[TagSequence]]:
    per_head = []
    for head in model.heads:
        pred = np.argmax(head_logits(model, head, feats, kernels), axis=1)
        per_head.append([TagSequence(model.format, head.mode, [head.vocab[i] for i in row])
                         for row in _split_rows(pred, feats.offsets)])
    return [list(x) for x in zip(*per_head)]


def _merge(model: Model, seqs: list[TagSequence]) -> TagSequence:
    if model.strategy == M1:
        return compose_joint(seqs[0], seqs[1])
    return seqs[0]


def predict(model: Model, tokens: Sequence[Token | str], kernels=None) -> TagSequence:
    """Tags for one token sequence: JOINT mode for nested strategies, FLAT mode for the baseline."""
    words = [t.text if isinstance(t, Token) else t for t in tokens]
    feats = _Features(*model.hasher.featurize([words]))
    return _merge(model, _tag_rows(model, feats, kernels)[0])


def predict_tags(model: Model, entries: Sequence[AnnotatedEntry], kernels=None) -> list[TagSequence]:
    feats = _featurize(model.hasher, entries)
    return [_merge(model, seqs) for seqs in _tag_rows(model, feats, kernels)]


def predict_corpus(model: Model, entries: Sequence[AnnotatedEntry], kernels=None) -> list[AnnotatedEntry]:
    """Entries with predicted entities (flat level-1 entities for the FLAT baseline)."""
    out = []
    for entry, tags in zip(entries, predict_tags(model, entries, kernels)):
        out.append(entry.with_entities(decode(tags)))
    return out


# --- serialization ----------------------------------------------------------------

def dumps_model(model: Model) -> bytes:
    header = {
        "version": MODEL_VERSION,
        "strategy": model.strategy,
        "format": model.format,
        "schema_fingerprint": model.schema_fingerprint,
        "hasher": model.hasher.params(),
        "config": asdict(model.config),
        "heads": [{"mode": h.mode, "vocab": h.vocab, "shape": list(h.weights.shape)} for h in model.heads],
        "history": model.history,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC + b"\n")
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for h in model.heads:
        buf.write(np.ascontiguousarray(h.weights, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(h.bias, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_model(data: bytes) -> Model:
    magic = MODEL_MAGIC + b"\n"
    if not data.startswith(magic):
        raise ValueError("not a nested-tagger model file")
    pos = len(magic)
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos:pos + n].decode("utf-8"))
    pos += n
    if header["version"] != MODEL_VERSION:
        raise ValueError(f"unsupported model version {header['version']}")
    heads = []
    for h in header["heads"]:
        rows, cols = h["shape"]
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy()
        pos += rows * cols * 8
        b = np.frombuffer(data, dtype="<f8", count=cols, offset=pos).copy()
        pos += cols * 8
        heads.append(Head(h["mode"], h["vocab"], w, b))
    hp = header["hasher"]
    hasher = FeatureHasher(hp["n_features"], hp["seed"], hp["window"], tuple(hp["ngram_range"]))
    return Model(header["strategy"], header["format"], heads, header["schema_fingerprint"], hasher,
                 TrainConfig.from_dict(header["config"]), header.get("history", []))


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path, schema: LabelSchema | None = None) -> Model:
    with open(path, "rb") as fh:
        model = loads_model(fh.read())
    if schema is not None and schema.fingerprint != model.schema_fingerprint:
        raise ValueError("model was trained with a different schema")
    return model
