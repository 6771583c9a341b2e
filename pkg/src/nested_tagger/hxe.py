"""Hierarchical cross-entropy over a label tree, plus flat cross-entropy.

The tagger keeps a single softmax over the leaves.  A node's probability is
the sum of the leaf probabilities below it, and the loss for gold leaf ``y``
with root-to-leaf path ``root = n0, n1, ..., nh = y`` is

    L = - sum_i  w(n_i) * log( P(n_i) / P(n_{i-1}) ),   w(n) = exp(-alpha * depth(n))

so ``alpha = 0`` telescopes back to ordinary cross-entropy and ``alpha > 0``
discounts the lower (finer) edges: confusing two leaves that share an
ancestor costs less than confusing leaves in different subtrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .schema import LabelTree


@dataclass(frozen=True)
class HxeConfig:
    alpha: float = 0.0
    epsilon: float = 1e-12

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if not 0 < self.epsilon <= 1e-6:
            raise ValueError("epsilon must lie in (0, 1e-6]")


@dataclass(frozen=True, eq=False)
class TreeArrays:
    """Dense per-leaf path layout consumed by the kernels."""

    paths: np.ndarray  # (K, H) node ids below the root, -1 padded
    coefs: np.ndarray  # (K, H) coefficient of log P(node) in the loss
    members: np.ndarray  # (n_nodes, K) bool


def edge_weights(tree: LabelTree, alpha: float) -> np.ndarray:
    """Weight of the edge entering each node, ``exp(-alpha * depth)``."""
    return np.exp(-alpha * tree.depth.astype(float))


@lru_cache(maxsize=64)
def _tree_arrays(tree: LabelTree, alpha: float) -> TreeArrays:
    w = edge_weights(tree, alpha)
    height = int(tree.depth[list(tree.leaf_nodes)].max()) if tree.n_leaves else 0
    paths = np.full((tree.n_leaves, height), -1, dtype=np.int64)
    coefs = np.zeros((tree.n_leaves, height))
    for j, leaf in enumerate(tree.leaf_nodes):
        path = tree.path(leaf)[1:]
        for pos, node in enumerate(path):
            paths[j, pos] = node
            coefs[j, pos] = -w[node] + (w[path[pos + 1]] if pos + 1 < len(path) else 0.0)
    return TreeArrays(paths, coefs, np.ascontiguousarray(tree.membership))


def tree_arrays(tree: LabelTree, cfg: HxeConfig) -> TreeArrays:
    return _tree_arrays(tree, float(cfg.alpha))


def _check_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return z


def softmax(logits) -> np.ndarray:
    z = _check_logits(logits)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def node_probability(dist, node, tree: LabelTree) -> float:
    """Total leaf probability under ``node`` (name or index); the root gets 1."""
    probs = np.asarray(dist, dtype=float)
    return float(probs[tree.membership[tree.node(node)]].sum())


def _leaf_index(gold, tree: LabelTree) -> int:
    if isinstance(gold, str):
        node = tree.node(gold)
        if node not in tree.leaf_nodes:
            raise ValueError(f"{gold!r} is not a leaf of the label tree")
        return tree.leaf_nodes.index(node)
    gold = int(gold)
    if not 0 <= gold < tree.n_leaves:
        raise ValueError(f"leaf index {gold} out of range")
    return gold


def hxe_loss_grad_batch(logits: np.ndarray, gold: np.ndarray, tree: LabelTree, cfg: HxeConfig = HxeConfig(),
                        kernels=None) -> tuple[float, np.ndarray]:
    """Summed loss and per-row gradients for a (T, K) logit batch."""
    k = kernels or _kernels.BACKEND
    arrs = tree_arrays(tree, cfg)
    z = np.ascontiguousarray(logits, dtype=float)
    if z.ndim != 2 or z.shape[1] != tree.n_leaves:
        raise ValueError(f"expected (T, {tree.n_leaves}) logits, got {z.shape}")
    return k.hxe_loss_grad(z, np.asarray(gold, dtype=np.int64), arrs.paths, arrs.coefs, arrs.members,
                           math.log(cfg.epsilon))


def ce_loss_grad_batch(logits: np.ndarray, gold: np.ndarray, epsilon: float = 1e-12,
                       kernels=None) -> tuple[float, np.ndarray]:
    k = kernels or _kernels.BACKEND
    z = np.ascontiguousarray(logits, dtype=float)
    return k.ce_loss_grad(z, np.asarray(gold, dtype=np.int64), math.log(epsilon))


def hxe_loss(logits, gold_leaf, tree: LabelTree, cfg: HxeConfig = HxeConfig()) -> float:
    z = _check_logits(logits)
    if z.shape != (tree.n_leaves,):
        raise ValueError(f"expected {tree.n_leaves} logits, got {z.shape}")
    loss, _ = hxe_loss_grad_batch(z[None], [_leaf_index(gold_leaf, tree)], tree, cfg)
    return loss


def hxe_gradient(logits, gold_leaf, tree: LabelTree, cfg: HxeConfig = HxeConfig()) -> np.ndarray:
    z = _check_logits(logits)
    if z.shape != (tree.n_leaves,):
        raise ValueError(f"expected {tree.n_leaves} logits, got {z.shape}")
    _, grad = hxe_loss_grad_batch(z[None], [_leaf_index(gold_leaf, tree)], tree, cfg)
    return grad[0]


def ce_loss(logits, gold: int, epsilon: float = 1e-12) -> float:
    z = _check_logits(logits)
    if not 0 <= gold < z.shape[0]:
        raise ValueError(f"gold index {gold} out of range")
    return ce_loss_grad_batch(z[None], [gold], epsilon)[0]


def ce_gradient(logits, gold: int, epsilon: float = 1e-12) -> np.ndarray:
    z = _check_logits(logits)
    if not 0 <= gold < z.shape[0]:
        raise ValueError(f"gold index {gold} out of range")
    return ce_loss_grad_batch(z[None], [gold], epsilon)[1][0]
