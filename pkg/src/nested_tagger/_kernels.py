"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``NESTED_TAGGER_DISABLE_NUMBA``
is unset (or ``0``).  Both paths are importable explicitly as ``NUMBA`` and
``NUMPY`` namespaces so tests and benchmarks can compare them.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLE = os.environ.get("NESTED_TAGGER_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLE

# alignment op codes
MATCH, SUBSTITUTE, DELETE, INSERT = 0, 1, 2, 3


# --- numpy implementations ----------------------------------------------------

def _np_edit_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = len(a), len(b)
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    d[0] = np.arange(m + 1)
    cols = np.arange(m + 1)
    for i in range(1, n + 1):
        prev = d[i - 1]
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (b != a[i - 1]))
        # insertions chain left to right: d[j] = min_k cand[k] + (j - k)
        d[i] = np.minimum.accumulate(cand - cols) + cols
    return d


def _np_backtrace(a: np.ndarray, b: np.ndarray, d: np.ndarray) -> np.ndarray:
    i, j = len(a), len(b)
    ops = []
    while i > 0 or j > 0:
        cur = d[i, j]
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and d[i - 1, j - 1] == cur:
            ops.append(MATCH)
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and d[i - 1, j - 1] + 1 == cur:
            ops.append(SUBSTITUTE)
            i -= 1
            j -= 1
        elif i > 0 and d[i - 1, j] + 1 == cur:
            ops.append(DELETE)
            i -= 1
        else:
            ops.append(INSERT)
            j -= 1
    return np.array(ops[::-1], dtype=np.int8)


def _np_align(a: np.ndarray, b: np.ndarray) -> tuple[int, np.ndarray]:
    d = _np_edit_table(a, b)
    return int(d[len(a), len(b)]), _np_backtrace(a, b, d)


def _np_segments(indptr, tok):
    starts = indptr[tok]
    lengths = indptr[tok + 1] - starts
    seg = np.zeros(len(tok), dtype=np.int64)
    np.cumsum(lengths[:-1], out=seg[1:])
    flat = np.repeat(starts - seg, lengths) + np.arange(lengths.sum())
    return flat, seg, lengths


def _np_sparse_logits(indptr, indices, tok, weights, bias, scale):
    flat, seg, lengths = _np_segments(indptr, tok)
    rows = weights[indices[flat]]
    out = np.zeros((len(tok), weights.shape[1]))
    nonempty = lengths > 0
    if rows.shape[0]:
        out[nonempty] = np.add.reduceat(rows, seg[nonempty], axis=0)
    return out * scale + bias


def _np_sparse_update(indptr, indices, tok, weights, grads, step):
    flat, _, lengths = _np_segments(indptr, tok)
    np.add.at(weights, indices[flat], -step * np.repeat(grads, lengths, axis=0))


def _np_log_softmax(logits):
    mx = logits.max(axis=1, keepdims=True)
    lse = mx + np.log(np.exp(logits - mx).sum(axis=1, keepdims=True))
    return logits - lse, lse


def _np_ce(logits, gold, log_eps):
    logp, _ = _np_log_softmax(logits)
    probs = np.exp(logp)
    t = np.arange(len(gold))
    nll = -logp[t, gold]
    floored = nll > -log_eps
    grad = probs.copy()
    grad[t, gold] -= 1.0
    grad[floored] = 0.0
    return float(np.where(floored, -log_eps, nll).sum()), grad


def _np_hxe(logits, gold, paths, coefs, members, log_eps):
    """``paths``/``coefs``: (K, H) node ids / path coefficients (root excluded, -1 padded);
    ``members``: (n_nodes, K) bool."""
    logp, lse = _np_log_softmax(logits)
    probs = np.exp(logp)
    loss = 0.0
    grad = np.zeros_like(logits)
    for pos in range(paths.shape[1]):
        node = paths[gold, pos]
        live = node >= 0
        if not live.any():
            continue
        mask = members[np.where(live, node, 0)] & live[:, None]
        zm = np.where(mask, logits, -np.inf)
        mx = zm.max(axis=1, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        ez = np.where(mask, np.exp(zm - mx), 0.0)
        s = ez.sum(axis=1, keepdims=True)
        s_safe = np.where(s > 0, s, 1.0)
        log_node = (mx + np.log(s_safe) - lse)[:, 0]
        c = np.where(live, coefs[gold, pos], 0.0)
        floored = log_node < log_eps
        loss += float((c * np.where(floored, log_eps, log_node)).sum())
        active = live & ~floored
        grad += np.where(active, c, 0.0)[:, None] * (ez / s_safe - probs)
    return loss, grad


NUMPY = SimpleNamespace(
    name="numpy",
    align=_np_align,
    sparse_logits=_np_sparse_logits,
    sparse_update=_np_sparse_update,
    ce_loss_grad=_np_ce,
    hxe_loss_grad=_np_hxe,
)


# --- numba implementations ----------------------------------------------------

if HAVE_NUMBA:
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def _nb_align(a, b):
        n, m = a.shape[0], b.shape[0]
        d = np.empty((n + 1, m + 1), dtype=np.int64)
        for j in range(m + 1):
            d[0, j] = j
        for i in range(1, n + 1):
            d[i, 0] = i
            ai = a[i - 1]
            for j in range(1, m + 1):
                best = d[i - 1, j - 1] + (0 if ai == b[j - 1] else 1)
                if d[i - 1, j] + 1 < best:
                    best = d[i - 1, j] + 1
                if d[i, j - 1] + 1 < best:
                    best = d[i, j - 1] + 1
                d[i, j] = best
        ops = np.empty(n + m, dtype=np.int8)
        k = 0
        i, j = n, m
        while i > 0 or j > 0:
            cur = d[i, j]
            if i > 0 and j > 0 and a[i - 1] == b[j - 1] and d[i - 1, j - 1] == cur:
                ops[k] = 0
                i -= 1
                j -= 1
            elif i > 0 and j > 0 and d[i - 1, j - 1] + 1 == cur:
                ops[k] = 1
                i -= 1
                j -= 1
            elif i > 0 and d[i - 1, j] + 1 == cur:
                ops[k] = 2
                i -= 1
            else:
                ops[k] = 3
                j -= 1
            k += 1
        return d[n, m], ops[:k][::-1].copy()

    @njit
    def _nb_sparse_logits(indptr, indices, tok, weights, bias, scale):
        n_cls = weights.shape[1]
        out = np.empty((tok.shape[0], n_cls))
        acc = np.empty(n_cls)
        for r in range(tok.shape[0]):
            t = tok[r]
            acc[:] = 0.0
            for p in range(indptr[t], indptr[t + 1]):
                f = indices[p]
                for c in range(n_cls):
                    acc[c] += weights[f, c]
            for c in range(n_cls):
                out[r, c] = acc[c] * scale + bias[c]
        return out

    @njit
    def _nb_sparse_update(indptr, indices, tok, weights, grads, step):
        n_cls = weights.shape[1]
        for r in range(tok.shape[0]):
            t = tok[r]
            for p in range(indptr[t], indptr[t + 1]):
                f = indices[p]
                for c in range(n_cls):
                    weights[f, c] -= step * grads[r, c]

    @njit
    def _nb_softmax_row(z, probs):
        mx = z[0]
        for k in range(1, z.shape[0]):
            if z[k] > mx:
                mx = z[k]
        s = 0.0
        for k in range(z.shape[0]):
            s += np.exp(z[k] - mx)
        lse = mx + np.log(s)
        for k in range(z.shape[0]):
            probs[k] = np.exp(z[k] - lse)
        return lse

    @njit
    def _nb_ce(logits, gold, log_eps):
        n, n_cls = logits.shape
        grad = np.empty((n, n_cls))
        probs = np.empty(n_cls)
        loss = 0.0
        for t in range(n):
            lse = _nb_softmax_row(logits[t], probs)
            g = gold[t]
            nll = -(logits[t, g] - lse)
            if nll > -log_eps:
                loss += -log_eps
                grad[t, :] = 0.0
            else:
                loss += nll
                for k in range(n_cls):
                    grad[t, k] = probs[k]
                grad[t, g] -= 1.0
        return loss, grad

    @njit
    def _nb_hxe(logits, gold, paths, coefs, members, log_eps):
        n, n_cls = logits.shape
        grad = np.zeros((n, n_cls))
        probs = np.empty(n_cls)
        ez = np.empty(n_cls)
        loss = 0.0
        for t in range(n):
            z = logits[t]
            lse = _nb_softmax_row(z, probs)
            g = gold[t]
            for pos in range(paths.shape[1]):
                node = paths[g, pos]
                if node < 0:
                    continue
                c = coefs[g, pos]
                mx = -np.inf
                for k in range(n_cls):
                    if members[node, k] and z[k] > mx:
                        mx = z[k]
                s = 0.0
                for k in range(n_cls):
                    if members[node, k]:
                        ez[k] = np.exp(z[k] - mx)
                        s += ez[k]
                    else:
                        ez[k] = 0.0
                log_node = mx + np.log(s) - lse
                if log_node < log_eps:
                    loss += c * log_eps
                    continue
                loss += c * log_node
                for k in range(n_cls):
                    grad[t, k] += c * (ez[k] / s - probs[k])
        return loss, grad

    NUMBA = SimpleNamespace(
        name="numba",
        align=_nb_align,
        sparse_logits=_nb_sparse_logits,
        sparse_update=_nb_sparse_update,
        ce_loss_grad=_nb_ce,
        hxe_loss_grad=_nb_hxe,
    )
else:  # pragma: no cover
    NUMBA = None

BACKEND = NUMBA if USE_NUMBA else NUMPY


def backend(name: str | None = None) -> SimpleNamespace:
    """Kernel namespace by name (``"numba"``/``"numpy"``), default the active one."""
    if name is None:
        return BACKEND
    if name == "numba":
        if NUMBA is None:
            raise RuntimeError("numba is not installed")
        return NUMBA
    if name == "numpy":
        return NUMPY
    raise ValueError(f"unknown kernel backend {name!r}")


def codepoints(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)
