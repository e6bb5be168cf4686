"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import collections
import itertools
import math

import numpy as np
from numba import njit

from doppelbaum.metrics import MAX_SHIFT_DIST, MAX_SHIFT_SIZE, _ter_edits


# -- finite differences --------------------------------------------------------


def numeric_grad(f, x, step=1e-6):
    """Central differences of scalar ``f`` at every entry of array ``x`` (in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        plus = f()
        x[i] = old - step
        minus = f()
        x[i] = old
        g[i] = (plus - minus) / (2 * step)
    return g


def rel_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# -- BLEU by explicit n-gram tables ------------------------------------------------


def ngram_table(tokens, n):
    return collections.Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_by_hand(pairs):
    """Corpus BLEU from pooled clipped counts; plain geometric mean, no smoothing."""
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in pairs:
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            h = ngram_table(hyp, n)
            r = ngram_table(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += sum(h.values())
    orders = [n for n in range(4) if totals[n] > 0]
    if not orders or any(matches[n] == 0 for n in orders):
        return 0.0
    logp = sum(math.log(matches[n] / totals[n]) for n in orders) / len(orders)
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100 * bp * math.exp(logp)


# -- exhaustive TER ------------------------------------------------------------------


def all_strings(max_len, alphabet=3):
    out = [()]
    for n in range(1, max_len + 1):
        out += list(itertools.product(range(alphabet), repeat=n))
    return out


def _lev_to_rows(a, refs):
    """Levenshtein distance from ``a`` to every row of ``refs`` (all of one length)."""
    k, m = refs.shape
    prev = np.tile(np.arange(m + 1), (k, 1))
    for i, sym in enumerate(a, 1):
        cur = np.empty_like(prev)
        cur[:, 0] = i
        best = np.minimum(prev[:, :-1] + (refs != sym), prev[:, 1:] + 1)
        for j in range(1, m + 1):
            cur[:, j] = np.minimum(best[:, j - 1], cur[:, j - 1] + 1)
        prev = cur
    return prev[:, m]


def _shift_neighbours(s):
    n = len(s)
    out = set()
    for i in range(n):
        for length in range(1, n - i + 1):
            block = s[i:i + length]
            rest = s[:i] + s[i + length:]
            for d in range(len(rest) + 1):
                t = rest[:d] + block + rest[d:]
                if t != s:
                    out.add(t)
    return out


def shift_distances(s):
    """Fewest block moves turning ``s`` into each rearrangement of itself (BFS)."""
    dist = {s: 0}
    queue = collections.deque([s])
    while queue:
        x = queue.popleft()
        for y in _shift_neighbours(x):
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return dist


def optimal_ter_edits(strings, references):
    """[len(strings), len(references)] minimum over shift sequences of shifts + Levenshtein.

    Every rearrangement reachable by block moves is enumerated; block moves
    can reach any permutation, so this is the true optimum of the TER
    objective for these inputs.
    """
    index = {s: i for i, s in enumerate(strings)}
    by_len = collections.defaultdict(list)
    for j, r in enumerate(references):
        by_len[len(r)].append(j)
    lev = np.empty((len(strings), len(references)), dtype=np.int64)
    for m, cols in by_len.items():
        refs = np.array([references[j] for j in cols], dtype=np.int64).reshape(len(cols), m)
        for i, s in enumerate(strings):
            lev[i, cols] = _lev_to_rows(s, refs)
    best = np.empty_like(lev)
    for i, s in enumerate(strings):
        cost = None
        for t, k in shift_distances(s).items():
            row = lev[index[t]] + k
            cost = row if cost is None else np.minimum(cost, row)
        best[i] = cost
    return best, lev


@njit(cache=True)
def _greedy_all(flat, offsets, lengths, ref_ids, max_shift_size, max_shift_dist):
    n = offsets.shape[0]
    out = np.empty((n, ref_ids.shape[0]), dtype=np.int64)
    for i in range(n):
        h = flat[offsets[i]:offsets[i] + lengths[i]].copy()
        for jj in range(ref_ids.shape[0]):
            j = ref_ids[jj]
            r = flat[offsets[j]:offsets[j] + lengths[j]].copy()
            out[i, jj] = _ter_edits(h, r, max_shift_size, max_shift_dist)[1]
    return out


def greedy_ter_edits(strings, ref_index):
    """Greedy TER edit counts for every string against ``strings[ref_index]``."""
    lengths = np.array([len(s) for s in strings], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    flat = np.array([x for s in strings for x in s], dtype=np.int64)
    return _greedy_all(flat, offsets, lengths, np.asarray(ref_index, dtype=np.int64),
                       MAX_SHIFT_SIZE, MAX_SHIFT_DIST)

