"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Also times one end-to-end M2-IO training run on each backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from nested_tagger import _kernels
from nested_tagger.corpus import split, synth_generate
from nested_tagger.features import FeatureHasher
from nested_tagger.hxe import HxeConfig, tree_arrays
from nested_tagger.schema import IO, IOB2, build_label_tree, default_schema
from nested_tagger.tagger import TrainConfig, train


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (JIT compile on first numba call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng: np.random.Generator):
    schema = default_schema()
    corpus = synth_generate(400, schema, seed=1)
    hasher = FeatureHasher()
    indptr, indices, _ = hasher.featurize([[t.text for t in e.tokens] for e in corpus])
    tree = build_label_tree(schema, IOB2)
    arrs = tree_arrays(tree, HxeConfig(alpha=0.5))
    n_tok = len(indptr) - 1
    tok = np.arange(min(n_tok, 256), dtype=np.int64)
    k = tree.n_leaves
    weights = rng.normal(size=(hasher.n_features, k)) * 0.01
    bias = np.zeros(k)
    logits = rng.normal(size=(len(tok), k))
    gold = rng.integers(0, k, size=len(tok))
    grads = rng.normal(size=(len(tok), k))
    a = _kernels.codepoints("Dufour (Gabriel), architecte, r. de Vaugirard, 14." * 2)
    b = _kernels.codepoints("Dnfour (Gabriel) architecte, r. de Vaugirard, l4," * 2)
    log_eps = np.log(1e-12)
    return {
        "align (100 chars)": lambda kk: kk.align(a, b),
        "sparse_logits (256 tokens)": lambda kk: kk.sparse_logits(indptr, indices, tok, weights, bias, 1.0),
        "sparse_update (256 tokens)": lambda kk: kk.sparse_update(indptr, indices, tok, weights, grads, 1e-9),
        "ce_loss_grad (256 x 29)": lambda kk: kk.ce_loss_grad(logits, gold, log_eps),
        "hxe_loss_grad (256 x 29)": lambda kk: kk.hxe_loss_grad(logits, gold, arrs.paths, arrs.coefs,
                                                                arrs.members, log_eps),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-training", action="store_true")
    args = ap.parse_args()
    if _kernels.NUMBA is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy (ms)':>12}{'numba (ms)':>12}{'speed-up':>10}")
    for name, fn in cases(rng).items():
        t_np = best_of(lambda: fn(_kernels.NUMPY), args.repeat)
        t_nb = best_of(lambda: fn(_kernels.NUMBA), args.repeat)
        print(f"{name:<28}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")
    if not args.skip_training:
        schema = default_schema()
        tr, dv, _ = split(synth_generate(1000, schema, seed=0))
        cfg = TrainConfig(max_steps=1000)
        out = {}
        for label, kk in (("numpy", _kernels.NUMPY), ("numba", _kernels.NUMBA)):
            train(tr.entries[:20], dv.entries[:5], "M2", IO, schema, TrainConfig(max_steps=2, eval_every=1),
                  kernels=kk)
            t = time.perf_counter()
            train(tr.entries, dv.entries, "M2", IO, schema, cfg, kernels=kk)
            out[label] = time.perf_counter() - t
        print(f"{'train M2-IO (1000 steps)':<28}{1e3 * out['numpy']:>12.0f}{1e3 * out['numba']:>12.0f}"
              f"{out['numpy'] / out['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
