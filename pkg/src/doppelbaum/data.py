"""Corpora of (source, MT, postedit) triples, BPE vocabulary and batching."""

from __future__ import annotations

import collections
import hashlib
import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .model import BOS, EOS, PAD, UNK

log = logging.getLogger(__name__)

RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
WORD_START = "▁"
VOCAB_HEADER = "#doppelbaum-bpe v1"


class AlignmentError(ValueError):
    """Parallel files disagree in length or contain an empty line."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def _merge_word(symbols, pair, joined):
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


class Vocabulary(BaseEstimator, TransformerMixin):
    """Byte-pair-style subword vocabulary shared by all three streams.

    ``fit`` learns merge rules on whitespace-tokenized text; ``transform``
    maps sentences to id arrays and ``inverse_transform`` maps them back.
    Words are segmented as a word-start marker followed by their characters,
    so merged units never cross word boundaries.

    Parameters
    ----------
    size : int
        Target vocabulary size including the four reserved tokens.
    """

    def __init__(self, size=1000):
        self.size = size

    def fit(self, X, y=None):
        if self.size < len(RESERVED):
            raise ValueError(f"vocabulary size {self.size} is below the {len(RESERVED)} reserved ids")
        counts = collections.Counter()
        for line in X:
            counts.update(line.split())
        if not counts:
            raise ValueError("cannot learn a vocabulary from an empty corpus")

        words = {w: (WORD_START,) + tuple(w) for w in counts}
        alphabet = sorted({s for syms in words.values() for s in syms})
        tokens = list(RESERVED) + alphabet
        known = set(tokens)
        merges = []
        if len(tokens) > self.size:
            warnings.warn(
                f"alphabet alone needs {len(tokens)} ids (> size {self.size}); no merges learned"
            )
        while len(tokens) < self.size:
            pairs = collections.Counter()
            for w, syms in words.items():
                c = counts[w]
                for a, b in zip(syms, syms[1:]):
                    pairs[(a, b)] += c
            if not pairs:
                break
            top = max(pairs.values())
            best = min(p for p, c in pairs.items() if c == top)
            joined = best[0] + best[1]
            merges.append(best)
            for w, syms in words.items():
                if len(syms) > 1:
                    words[w] = _merge_word(syms, best, joined)
            if joined not in known:
                known.add(joined)
                tokens.append(joined)

        self._set_tables(alphabet, merges, tokens)
        return self

    def _set_tables(self, alphabet, merges, tokens):
        self.alphabet_ = list(alphabet)
        self.merges_ = [tuple(m) for m in merges]
        self.tokens_ = list(tokens)
        self.token_to_id_ = {t: i for i, t in enumerate(self.tokens_)}
        self._ranks = {m: r for r, m in enumerate(self.merges_)}
        self._cache = {}

    def __len__(self):
        check_is_fitted(self, "tokens_")
        return len(self.tokens_)

    def segment_word(self, word):
        """Apply the learned merges to one word; returns its subword strings."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        syms = (WORD_START,) + tuple(word)
        ranks = self._ranks
        while len(syms) > 1:
            best = None
            best_rank = None
            for pair in zip(syms, syms[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            syms = _merge_word(syms, best, best[0] + best[1])
        self._cache[word] = syms
        return syms

    def segment(self, sentence):
        return [s for w in sentence.split() for s in self.segment_word(w)]

    def encode(self, sentence, target=False):
        """Ids for one sentence; ``target=True`` wraps with BOS/EOS."""
        check_is_fitted(self, "tokens_")
        lookup = self.token_to_id_
        ids = [lookup.get(s, UNK) for s in self.segment(sentence)]
        if target:
            ids = [BOS] + ids + [EOS]
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids):
        """Detokenized text; PAD/BOS/EOS are dropped, UNK renders as ``<unk>``."""
        check_is_fitted(self, "tokens_")
        pieces = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS, EOS):
                continue
            pieces.append(self.tokens_[i] if i != UNK else RESERVED[UNK])
        return " ".join("".join(pieces).replace(WORD_START, " ").split())

    def transform(self, X, target=False):
        return [self.encode(s, target=target) for s in X]

    def inverse_transform(self, X):
        return [self.decode(ids) for ids in X]

    # -- file format ----------------------------------------------------------
    #
    # #doppelbaum-bpe v1
    # #reserved
    # <pad> / <s> / </s> / <unk>       (one per line)
    # #alphabet
    # one symbol per line
    # #merges
    # "left right" per line, in learning order

    def save(self, path):
        check_is_fitted(self, "tokens_")
        lines = [VOCAB_HEADER, "#reserved", *RESERVED, "#alphabet", *self.alphabet_, "#merges"]
        lines += [f"{a} {b}" for a, b in self.merges_]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if not lines or lines[0] != VOCAB_HEADER:
            raise ValueError(f"{path}: not a vocabulary file (missing '{VOCAB_HEADER}')")
        sections = {"#reserved": [], "#alphabet": [], "#merges": []}
        current = None
        for line in lines[1:]:
            if line in sections:
                current = sections[line]
            elif line and current is not None:
                current.append(line)
        if tuple(sections["#reserved"]) != RESERVED:
            raise ValueError(f"{path}: unexpected reserved tokens {sections['#reserved']}")
        merges = [tuple(m.split(" ")) for m in sections["#merges"]]
        tokens = list(RESERVED) + sections["#alphabet"]
        known = set(tokens)
        for a, b in merges:
            if a + b not in known:
                known.add(a + b)
                tokens.append(a + b)
        vocab = cls(size=len(tokens))
        vocab._set_tables(sections["#alphabet"], merges, tokens)
        return vocab

    def fingerprint(self):
        check_is_fitted(self, "tokens_")
        return hashlib.sha256("\n".join(self.tokens_).encode("utf-8")).hexdigest()[:16]


def learn_subwords(corpus, target_size):
    return Vocabulary(size=target_size).fit(corpus)


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------


@dataclass
class TripleExample:
    src: str
    mt: str
    pe: str
    src_ids: np.ndarray | None = None
    mt_ids: np.ndarray | None = None
    pe_ids: np.ndarray | None = None  # BOS ... EOS


@dataclass
class Corpus:
    name: str
    examples: list = field(default_factory=list)
    role: str = "train"

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def sentences(self):
        for ex in self.examples:
            yield ex.src
            yield ex.mt
            yield ex.pe


def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n").rstrip("\r") for line in fh]


def check_aligned(columns, names=None, allow_empty=False):
    """Raise :class:`AlignmentError` at the first misaligned or empty line."""
    names = names or [f"file {i}" for i in range(len(columns))]
    lengths = [len(c) for c in columns]
    for lineno, row in enumerate(itertools.zip_longest(*columns), start=1):
        for name, text in zip(names, row):
            if text is None:
                raise AlignmentError(
                    f"{name} ends early ({', '.join(f'{n}={k}' for n, k in zip(names, lengths))} lines)",
                    lineno,
                )
            if not allow_empty and not text.strip():
                raise AlignmentError(f"{name} has an empty line", lineno)


def read_corpus(src_path, mt_path, pe_path, name="corpus", role="train"):
    cols = [read_lines(p) for p in (src_path, mt_path, pe_path)]
    check_aligned(cols, [str(src_path), str(mt_path), str(pe_path)])
    return Corpus(name, [TripleExample(*row) for row in zip(*cols)], role)


def corpus_from_triples(triples, name="corpus", role="train"):
    triples = list(triples)
    check_aligned([[t[i] for t in triples] for i in range(3)], ["src", "mt", "pe"])
    return Corpus(name, [TripleExample(s, m, p) for s, m, p in triples], role)


def numericalize(corpus, vocab, max_len, train=True):
    """Attach id arrays; over-long triples are dropped (train) or truncated."""
    kept = []
    dropped = truncated = 0
    for ex in corpus.examples:
        src = vocab.encode(ex.src)
        mt = vocab.encode(ex.mt)
        pe = vocab.encode(ex.pe, target=True)
        if len(src) > max_len or len(mt) > max_len or len(pe) - 1 > max_len:
            if train:
                dropped += 1
                continue
            truncated += 1
            src, mt = src[:max_len], mt[:max_len]
            if len(pe) - 1 > max_len:
                pe = np.concatenate([pe[:max_len], [EOS]])
        kept.append(TripleExample(ex.src, ex.mt, ex.pe, src, mt, pe))
    if dropped:
        log.warning("%s: dropped %d triples longer than %d subwords", corpus.name, dropped, max_len)
    if truncated:
        log.warning("%s: truncated %d triples to %d subwords", corpus.name, truncated, max_len)
    return Corpus(corpus.name, kept, corpus.role)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    src: np.ndarray
    src_len: np.ndarray
    mt: np.ndarray
    mt_len: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_len: np.ndarray

    @property
    def size(self):
        return self.src.shape[0]

    @property
    def num_target_tokens(self):
        return int(self.tgt_len.sum())


def _pad(seqs):
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), max(int(lengths.max()), 1)), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def make_batch(examples):
    if not examples:
        raise ValueError("cannot batch zero examples")
    src, src_len = _pad([e.src_ids for e in examples])
    mt, mt_len = _pad([e.mt_ids for e in examples])
    tgt_in, tgt_len = _pad([e.pe_ids[:-1] for e in examples])
    tgt_out, _ = _pad([e.pe_ids[1:] for e in examples])
    return Batch(src, src_len, mt, mt_len, tgt_in, tgt_out, tgt_len)


def example_cost(ex):
    return max(len(ex.src_ids), len(ex.mt_ids), len(ex.pe_ids) - 1)


def token_batches(stream, tokens_per_batch):
    """Group a stream so that ``batch_size * longest_stream`` never exceeds the budget."""
    bucket = []
    longest = 0
    for ex in stream:
        cost = example_cost(ex)
        if cost > tokens_per_batch:
            log.warning("skipping a triple of %d subwords (> %d per batch)", cost, tokens_per_batch)
            continue
        new_longest = max(longest, cost)
        if bucket and new_longest * (len(bucket) + 1) > tokens_per_batch:
            yield make_batch(bucket)
            bucket, new_longest = [], cost
        bucket.append(ex)
        longest = new_longest
    if bucket:
        yield make_batch(bucket)


def epoch_stream(examples, rng):
    """Endless stream, reshuffled each epoch with ``rng``."""
    if not examples:
        raise ValueError("empty corpus")
    while True:
        for i in rng.permutation(len(examples)):
            yield examples[i]


def blend(pretrain, finetune, ratio, seed):
    """Deterministic interleave: ``ratio`` pretrain triples, then one finetune triple.

    Every window of ``ratio + 1`` consecutive items therefore holds exactly one
    finetune triple. Each corpus is reshuffled per epoch from ``seed``.
    """
    if ratio < 1 or int(ratio) != ratio:
        raise ValueError(f"blend ratio must be a positive integer, got {ratio}")
    if not len(pretrain) or not len(finetune):
        raise ValueError("both corpora must be nonempty")
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng_a, rng_b = (np.random.default_rng(s) for s in seed.spawn(2))
    a = epoch_stream(list(pretrain), rng_a)
    b = epoch_stream(list(finetune), rng_b)
    while True:
        for _ in range(int(ratio)):
            yield next(a)
        yield next(b)
