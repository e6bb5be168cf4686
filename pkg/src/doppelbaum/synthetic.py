"""Toy corpora for tests and smoke runs.

``copy_task`` triples have identical MT and postedit, so a working model
learns to echo the MT. ``ape_task`` triples come from a word-for-word
"translation" lexicon with one local reordering rule; the MT is the correct
translation with injected errors (substitution, deletion, insertion,
adjacent swap) and the postedit is the correct translation.
"""

from __future__ import annotations

import numpy as np

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def make_words(n, rng, syllables=2):
    """``n`` distinct pronounceable pseudo-words."""
    words = []
    seen = set()
    while len(words) < n:
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(syllables))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def copy_task(n, seed=0, n_words=12, min_len=3, max_len=8, words_seed=0):
    """(src, mt, pe) triples with src == mt == pe.

    The word list depends only on ``words_seed``, so corpora drawn with
    different ``seed`` values share one vocabulary.
    """
    words = make_words(n_words, np.random.default_rng(words_seed))
    rng = np.random.default_rng(seed)
    triples = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        sent = " ".join(words[i] for i in rng.integers(0, n_words, length))
        triples.append((sent, sent, sent))
    return triples


class Lexicon:
    """Source word i translates to target word i; markers trigger a swap."""

    def __init__(self, n_words, seed=0):
        rng = np.random.default_rng(seed)
        words = make_words(2 * n_words, rng)
        self.source = words[:n_words]
        self.target = [w.upper() for w in words[n_words:]]
        # a source word from this set swaps places with its right neighbour
        self.swappers = set(range(0, n_words, 4))

    def translate(self, ids):
        out = list(ids)
        i = 0
        while i < len(out) - 1:
            if out[i] in self.swappers and out[i + 1] not in self.swappers:
                out[i], out[i + 1] = out[i + 1], out[i]
                i += 2
            else:
                i += 1
        return [self.target[k] for k in out]


def corrupt(tokens, vocabulary, rng, n_errors):
    tokens = list(tokens)
    for _ in range(n_errors):
        kind = rng.integers(4) if len(tokens) > 1 else 2
        i = int(rng.integers(len(tokens)))
        if kind == 0:
            tokens[i] = vocabulary[int(rng.integers(len(vocabulary)))]
        elif kind == 1:
            del tokens[i]
        elif kind == 2:
            tokens.insert(i, vocabulary[int(rng.integers(len(vocabulary)))])
        else:
            j = min(i + 1, len(tokens) - 1)
            tokens[i], tokens[j] = tokens[j], tokens[i]
    return tokens


def ape_task(n, seed=0, n_words=16, min_len=3, max_len=9, error_rate=0.7, lexicon_seed=0):
    """(src, mt, pe) triples; ``error_rate`` of the MT sentences carry 1-2 errors."""
    lex = Lexicon(n_words, lexicon_seed)
    rng = np.random.default_rng(seed)
    triples = []
    for _ in range(n):
        ids = rng.integers(0, n_words, int(rng.integers(min_len, max_len + 1))).tolist()
        pe = lex.translate(ids)
        mt = pe
        if rng.random() < error_rate:
            mt = corrupt(pe, lex.target, rng, int(rng.integers(1, 3))) or pe
        triples.append((" ".join(lex.source[k] for k in ids), " ".join(mt), " ".join(pe)))
    return triples


def write_triples(triples, prefix):
    """Write ``prefix.src``, ``prefix.mt`` and ``prefix.pe``; returns the three paths."""
    paths = []
    for i, ext in enumerate(("src", "mt", "pe")):
        path = f"{prefix}.{ext}"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("".join(t[i] + "\n" for t in triples))
        paths.append(path)
    return paths
