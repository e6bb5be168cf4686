"""Greedy and beam-search decoding for :class:`~doppelbaum.model.APETransformer`."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .model import BOS, EOS, PAD
from .tensor import Tensor, no_grad

_BLOCKED = (PAD, BOS)


@dataclass
class DecodeConfig:
    beam_size: int = 5
    length_penalty: float = 0.6
    length_ratio: float = 1.3
    max_len: int = 256

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.length_ratio <= 0:
            raise ValueError("length_ratio must be positive")
        if self.length_penalty < 0:
            raise ValueError("length_penalty must be non-negative")


@dataclass
class Hypothesis:
    tokens: list = field(default_factory=list)  # generated ids, EOS last when finished
    logprob: float = 0.0
    finished: bool = False

    def score(self, alpha):
        return self.logprob / length_penalty(max(len(self.tokens), 1), alpha)

    @property
    def output(self):
        return self.tokens[:-1] if self.finished else list(self.tokens)


def length_penalty(length, alpha):
    """GNMT penalty ((5 + length) / 6) ** alpha."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return ((5.0 + length) / 6.0) ** alpha


def length_cap(mt_length, ratio, max_len=None):
    """ceil(ratio * mt_length), computed on the decimal value of ``ratio``."""
    cap = math.ceil(Fraction(str(ratio)) * int(mt_length))
    cap = max(cap, 1)
    return min(cap, max_len) if max_len else cap


class _Encoded:
    def __init__(self, model, src_ids, mt_ids):
        src = np.asarray(src_ids, dtype=np.int64)[None, :]
        mt = np.asarray(mt_ids, dtype=np.int64)[None, :]
        if mt.shape[1] == 0:
            raise ValueError("cannot decode an empty MT sentence")
        self.model = model
        self.x_len = np.array([src.shape[1]])
        self.z_len = np.array([mt.shape[1]])
        if src.shape[1] == 0:
            # an empty source still needs one attendable position
            src = np.full((1, 1), PAD, dtype=np.int64)
            self.x_len = np.array([1])
        self.u = model.encode_source(src, self.x_len)
        self.v, _ = model.encode_mt(mt, self.z_len, self.u, self.x_len)

    def next_logprobs(self, prefixes):
        """Log-probabilities of the next token for each row of ``prefixes``."""
        n, t = prefixes.shape
        u = Tensor(np.repeat(self.u.data, n, axis=0))
        v = Tensor(np.repeat(self.v.data, n, axis=0))
        logits = self.model.decode(
            prefixes, np.full(n, t), u, np.repeat(self.x_len, n), v, np.repeat(self.z_len, n)
        )
        last = Tensor(logits.data[:, -1, :])
        logp = T.log_softmax(last).data.copy()
        logp[:, list(_BLOCKED)] = -np.inf
        return logp


def greedy_search(model, src_ids, mt_ids, config=None):
    """Argmax decoding; stops at EOS or at the length cap."""
    config = config or DecodeConfig(beam_size=1)
    model.eval()
    with no_grad():
        enc = _Encoded(model, src_ids, mt_ids)
        cap = length_cap(len(mt_ids), config.length_ratio,
                         min(config.max_len, model.config.max_len - 1))
        hyp = Hypothesis()
        while len(hyp.tokens) < cap:
            prefix = np.array([[BOS] + hyp.tokens], dtype=np.int64)
            logp = enc.next_logprobs(prefix)[0]
            tok = int(np.argmax(logp))
            hyp = Hypothesis(hyp.tokens + [tok], hyp.logprob + float(logp[tok]), tok == EOS)
            if hyp.finished:
                break
    return hyp


def beam_search(model, src_ids, mt_ids, config=None):
    """Beam search ranked by raw log-probability, finalized by length-normalized score.

    A hypothesis is finished when it emits EOS among the step's top ``b``
    candidates. Search stops once the single best candidate of a step is an
    EOS: every live prefix then already scores below it, and log-probability
    only falls with length. Hypotheses that reach the length cap stop
    expanding without being finished; they are returned (with
    ``finished=False``) only when no finished hypothesis exists.
    """
    config = config or DecodeConfig()
    b = config.beam_size
    model.eval()
    with no_grad():
        enc = _Encoded(model, src_ids, mt_ids)
        cap = length_cap(len(mt_ids), config.length_ratio,
                         min(config.max_len, model.config.max_len - 1))
        alive = [Hypothesis()]
        finished = []
        capped = []
        while alive:
            prefixes = np.array([[BOS] + h.tokens for h in alive], dtype=np.int64)
            logp = enc.next_logprobs(prefixes)
            totals = np.array([h.logprob for h in alive])[:, None] + logp
            flat = totals.ravel()
            # stable sort keeps (row, token) order among equal scores
            order = np.argsort(-flat, kind="stable")[: 2 * b]
            V = logp.shape[1]
            cand = [(-flat[i], int(i) // V, int(i) % V) for i in order if np.isfinite(flat[i])]
            next_alive = []
            slots = 0
            for rank, (neg, r, tok) in enumerate(cand):
                if slots >= b and rank >= b:
                    break
                hyp = Hypothesis(alive[r].tokens + [tok], -neg, tok == EOS)
                if hyp.finished:
                    if rank < b:
                        finished.append(hyp)
                elif slots < b:
                    slots += 1
                    (capped if len(hyp.tokens) >= cap else next_alive).append(hyp)
            if cand and cand[0][2] == EOS:
                break
            alive = next_alive

    pool = finished or capped or alive
    return min(pool, key=lambda h: (-h.score(config.length_penalty), h.tokens, len(h.tokens)))


def decode_sentence(model, src_ids, mt_ids, config):
    if config.beam_size == 1:
        return greedy_search(model, src_ids, mt_ids, config)
    return beam_search(model, src_ids, mt_ids, config)


def translate(model, vocab, sources, mts, config=None):
    """Postedit parallel lists of source/MT strings; order is preserved."""
    config = config or DecodeConfig()
    if len(sources) != len(mts):
        raise ValueError(f"{len(sources)} source lines but {len(mts)} MT lines")
    outputs = []
    for src, mt in zip(sources, mts):
        src_ids = vocab.encode(src)[: model.config.max_len]
        mt_ids = vocab.encode(mt)[: model.config.max_len]
        hyp = beam_search(model, src_ids, mt_ids, config)
        outputs.append(vocab.decode(hyp.output))
    return outputs
